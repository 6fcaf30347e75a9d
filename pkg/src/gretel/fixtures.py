"""Synthetic corpora with injected failure modes.

Each tool is assigned one mode, which fixes how its trial ends:

* ``parameter_mismatch``: the scripted planner omits a mandatory parameter
  (or answers in prose), so planning fails.
* ``semantic_mismatch``: the mock server answers 200 with an empty payload.
* ``execution_failure``: the mock server answers 401 (simulation then
  succeeds) or 500 (the simulator answers in prose and fails).
* ``functional_success``: the mock server answers 200 with data.

``python -m gretel.fixtures gap DEST`` regenerates the bundled gap fixture.
"""

from __future__ import annotations

import argparse
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

MODES = ("parameter_mismatch", "semantic_mismatch", "execution_failure", "functional_success")
# Parameter Mismatch / Semantic Mismatch / Execution Failure / Functional Success
REFERENCE_MIX = {
    "parameter_mismatch": 0.42,
    "semantic_mismatch": 0.25,
    "execution_failure": 0.18,
    "functional_success": 0.15,
}
MODE_TO_CLASS = {
    "parameter_mismatch": "PARAMETER_MISMATCH",
    "semantic_mismatch": "SEMANTIC_MISMATCH",
    "execution_failure": "EXECUTION_FAILURE",
    "functional_success": "FUNCTIONAL_SUCCESS",
}


@dataclass
class Fixture:
    tools: list[dict[str, Any]] = field(default_factory=list)
    queries: list[dict[str, Any]] = field(default_factory=list)
    scenario: dict[str, Any] = field(default_factory=dict)
    script: list[dict[str, Any]] = field(default_factory=list)
    modes: dict[str, str] = field(default_factory=dict)

    def write(self, dest: str | Path, run_toml: str | None = None) -> Path:
        dest = Path(dest)
        dest.mkdir(parents=True, exist_ok=True)
        with (dest / "tools.jsonl").open("w", encoding="utf-8") as fh:
            for t in self.tools:
                fh.write(json.dumps(t) + "\n")
        with (dest / "queries.jsonl").open("w", encoding="utf-8") as fh:
            for q in self.queries:
                fh.write(json.dumps(q) + "\n")
        (dest / "scenario.json").write_text(json.dumps(self.scenario, indent=2) + "\n", encoding="utf-8")
        (dest / "script.json").write_text(json.dumps({"entries": self.script}, indent=2) + "\n", encoding="utf-8")
        (dest / "modes.json").write_text(json.dumps(self.modes, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if run_toml is not None:
            (dest / "run.toml").write_text(run_toml, encoding="utf-8")
        return dest


def planner_match(tool_id: str) -> list[str]:
    return ["You are the Planner", f'"tool_id": "{tool_id}"']


def simulator_match(tool_id: str) -> list[str]:
    return ["You are the Simulator", f'"tool_id": "{tool_id}"']


def evaluator_match(query_text: str) -> list[str]:
    return ["You are the Evaluator", f"User query:\n{query_text}\n"]


def add_injected_tool(
    fx: Fixture,
    tool_id: str,
    name: str,
    description: str,
    api_description: str,
    mode: str,
    *,
    variant: int = 0,
    query_value: str = "demo",
) -> None:
    """Append one single-API tool whose trial outcome is fixed by ``mode``.

    ``variant`` picks the sub-flavour: for parameter mismatches 0 = missing
    mandatory field, 1 = prose answer; for execution failures 0 = 401 with a
    successful simulation, 1 = 500 with a failed simulation; for semantic
    mismatches 0 = ``[]``, 1 = ``{}``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    params = [{"name": "q", "kind": "string", "required": True, "location": "query",
               "description": "search text"}]
    if mode == "parameter_mismatch":
        params.append({"name": "account_ref", "kind": "string", "required": True, "location": "query",
                       "description": "partner account reference"})
    fx.tools.append({
        "tool_id": tool_id,
        "name": name,
        "description": description,
        "apis": [{
            "api_name": "lookup",
            "description": api_description,
            "method": "GET",
            "endpoint_template": f"/mock/{tool_id}/lookup",
            "requires_auth": mode == "execution_failure" and variant % 2 == 0,
            "params": params,
        }],
    })
    fx.modes[f"{tool_id}/lookup"] = mode
    key = f"{tool_id}/lookup"

    if mode == "parameter_mismatch" and variant % 2 == 1:
        plan_reply: Any = "The account reference cannot be inferred from this request."
    else:
        plan_reply = {"q": query_value}
    fx.script.append({"contains": planner_match(tool_id), "response": plan_reply})

    if mode == "functional_success":
        fx.scenario[key] = {"respond_status": 200, "body": {"results": [{"id": 1, "match": "{q}", "source": name}]},
                            "validate_params": True}
    elif mode == "semantic_mismatch":
        fx.scenario[key] = {"respond_status": 200, "body": [] if variant % 2 == 0 else {}}
    elif mode == "execution_failure":
        if variant % 2 == 0:
            fx.scenario[key] = {"respond_status": 200, "body": {"results": [{"id": 7}]}, "require_auth": True}
            sim_reply: Any = {"results": [{"id": 1, "match": query_value, "source": name, "simulated": True}]}
        else:
            fx.scenario[key] = {"respond_status": 500, "body": {"error": "upstream unavailable"}}
            sim_reply = "No plausible response can be produced for this call."
        fx.script.append({"contains": simulator_match(tool_id), "response": sim_reply})
    else:
        fx.scenario[key] = {"respond_status": 200, "body": {"results": [{"id": 3}]}}


def quota(n: int, mix: dict[str, float]) -> dict[str, int]:
    """Split ``n`` across ``mix`` by largest remainder; counts sum to ``n``."""
    total = sum(mix.values())
    if n < 0 or total <= 0:
        raise ValueError("need n >= 0 and a positive mix")
    exact = {m: n * w / total for m, w in mix.items()}
    counts = {m: int(v) for m, v in exact.items()}
    by_remainder = sorted(mix, key=lambda m: (-(exact[m] - counts[m]), list(mix).index(m)))
    for m in by_remainder[: n - sum(counts.values())]:
        counts[m] += 1
    return counts


def injection_fixture(n_trials: int, mix: dict[str, float] = REFERENCE_MIX, seed: int = 0) -> Fixture:
    """``n_trials`` single-API tools whose modes follow ``mix`` as closely as integer counts allow.

    Modes are allocated by quota and then shuffled, so the realized mix differs
    from ``mix`` only by rounding (at most one tool per mode).
    """
    rng = random.Random(seed)
    assigned = [m for m, c in quota(n_trials, mix).items() for _ in range(c)]
    rng.shuffle(assigned)
    fx = Fixture()
    for i, mode in enumerate(assigned):
        add_injected_tool(fx, f"inj{i:04d}", f"Injected {i}", f"synthetic tool number {i}",
                          "synthetic lookup", mode, variant=rng.randrange(2))
    fx.queries.append({"query_id": "inj", "text": "synthetic injection query",
                       "relevant": [{"tool_id": t["tool_id"], "api_name": "lookup"} for t in fx.tools]})
    return fx


# -- gap fixture ----------------------------------------------------------------

TOPICS: list[dict[str, Any]] = [
    {
        "anchor": "weather",
        "words": ["forecast", "rain", "temperature", "wind", "humidity", "storm", "snow", "sunny", "hourly"],
        "brands": ["Nimbus", "Cirrus", "Stratus", "Zephyr", "Monsoon", "Isobar", "Drizzle", "Aurora", "Gale", "Haze"],
        "filler": ["service", "station", "readings", "dataset", "archive"],
    },
    {
        "anchor": "stock",
        "words": ["price", "ticker", "quote", "dividend", "earnings", "market", "shares", "exchange", "volatility"],
        "brands": ["Bullish", "Tickr", "Quantex", "Equito", "Marketly", "Dividex", "Sharepoint", "Bourse", "Ledgerly", "Capix"],
        "filler": ["service", "feed", "records", "dataset", "portal"],
    },
    {
        "anchor": "recipe",
        "words": ["ingredients", "vegetarian", "dinner", "calories", "cooking", "dessert", "pasta", "bake", "meal"],
        "brands": ["Cookly", "Saveur", "Pantry", "Ladle", "Whisk", "Simmer", "Braise", "Zest", "Morsel", "Platter"],
        "filler": ["service", "catalog", "records", "dataset", "collection"],
    },
    {
        "anchor": "movie",
        "words": ["showtimes", "cinema", "trailer", "actor", "genre", "tickets", "rating", "director", "premiere"],
        "brands": ["Reelix", "Cinemo", "Flickr8", "Marquee", "Screenly", "Projecta", "Montage", "Cutaway", "Popcorn", "Klieg"],
        "filler": ["service", "catalog", "records", "dataset", "listing"],
    },
    {
        "anchor": "currency",
        "words": ["exchange", "rate", "convert", "euro", "dollar", "yen", "forex", "remittance", "historical"],
        "brands": ["Forexa", "Coinvert", "Ratewise", "Xchange", "Tender", "Mintly", "Bullion", "Fiatly", "Swapper", "Spotrate"],
        "filler": ["service", "feed", "records", "dataset", "ledger"],
    },
]

# per topic: how many tools in each mode (each row sums to 10; totals 21/12/9/8 of 50)
GAP_MODE_COUNTS = [
    {"parameter_mismatch": 4, "semantic_mismatch": 3, "execution_failure": 2, "functional_success": 1},
    {"parameter_mismatch": 4, "semantic_mismatch": 3, "execution_failure": 2, "functional_success": 1},
    {"parameter_mismatch": 4, "semantic_mismatch": 2, "execution_failure": 2, "functional_success": 2},
    {"parameter_mismatch": 4, "semantic_mismatch": 2, "execution_failure": 2, "functional_success": 2},
    {"parameter_mismatch": 5, "semantic_mismatch": 2, "execution_failure": 1, "functional_success": 2},
]
QUERY_FRAMES = [
    "please show {w}",
    "i need {w}",
    "can you get {w}",
    "looking up {w} now",
]
QUERIES_PER_TOPIC = 4


def _gap_toml() -> str:
    return (
        "# Gap-injection fixture: 50 tools, 20 queries, failure mix near 42/25/18/15.\n"
        "[paths]\n"
        'tools = "tools.jsonl"\nqueries = "queries.jsonl"\nscenario = "scenario.json"\noutput = "out"\n\n'
        "[retriever]\nk = 10\n\n"
        "[trial]\ntimeout_ms = 10000\nmax_concurrency = 4\nsimulation_enabled = true\ncache_planned_calls = true\n\n"
        '[llm]\nmode = "scripted"\nscript_path = "script.json"\n\n'
        '[rerank]\nmode = "llm"\nlatency_tiebreak = false\n\n'
        "[eval]\nk_values = [3, 5, 10]\npass_rate = true\npass_rate_requires_relevance = true\n\n"
        '[sandbox]\nallowlist = ["127.0.0.1"]\n'
    )


def gap_fixture(seed: int = 7) -> Fixture:
    """50 tools in 5 topics; wordy descriptions go to the broken tools.

    Within a topic, tools that fail at planning or return nothing get the
    richest keyword coverage, so BM25 puts them on top, while the working
    tools have terse descriptions and land further down.
    """
    from .corpus import build_corpus, parse_tool
    from .retriever import build_index, retrieve

    rng = random.Random(seed)
    fx = Fixture()
    variant_counter = {m: 0 for m in MODES}
    for ti, (topic, counts) in enumerate(zip(TOPICS, GAP_MODE_COUNTS)):
        modes = [m for m in MODES for _ in range(counts[m])]
        # flawed modes first, so they receive the richer descriptions
        rng.shuffle(modes)
        modes.sort(key=lambda m: m in ("execution_failure", "functional_success"))
        words = topic["words"]
        for j, mode in enumerate(modes):
            working = mode in ("execution_failure", "functional_success")
            n_words = rng.randint(1, 2) if working else rng.randint(4, 7)
            chosen = rng.sample(words, n_words)
            filler = rng.sample(topic["filler"], 2 if working else 1)
            brand = topic["brands"][j]
            tool_id = f"{topic['anchor']}_{brand.lower()}"
            description = f"{brand} {topic['anchor']} {' '.join(chosen[: max(1, n_words // 2)])} {filler[0]}"
            api_description = f"{' '.join(chosen[max(1, n_words // 2):]) or topic['anchor']} {' '.join(filler[1:])}".strip()
            add_injected_tool(fx, tool_id, brand, description, api_description, mode,
                              variant=variant_counter[mode], query_value=topic["anchor"])
            variant_counter[mode] += 1
        topic_tools = [t["tool_id"] for t in fx.tools[-10:]]
        for qi in range(QUERIES_PER_TOPIC):
            picked = rng.sample(words, 3)
            text = QUERY_FRAMES[qi].format(w=f"{topic['anchor']} {' '.join(picked)}")
            fx.queries.append({
                "query_id": f"q{ti + 1:02d}{qi + 1}",
                "text": text,
                "relevant": [{"tool_id": t, "api_name": "lookup"} for t in topic_tools],
            })

    # scripted evaluator: working tools (real success first, then simulated) in retrieval order
    corpus = build_corpus(parse_tool(t) for t in fx.tools)
    index = build_index(corpus)
    for q in fx.queries:
        ranked = retrieve(index, q["text"], 10, query_id=q["query_id"])
        real, simulated = [], []
        for c in ranked:
            mode = fx.modes[f"{c.tool_id}/{c.api_name}"]
            tool = corpus[c.tool_id]
            if mode == "functional_success":
                real.append([tool.name, c.api_name])
            elif mode == "execution_failure" and tool.apis[0].requires_auth:
                simulated.append([tool.name, c.api_name])
        fx.script.append({"contains": evaluator_match(q["text"]), "response": real + simulated})
    return fx


def write_gap_fixture(dest: str | Path, seed: int = 7) -> Path:
    return gap_fixture(seed).write(dest, run_toml=_gap_toml())


def main(argv: Sequence[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="python -m gretel.fixtures")
    parser.add_argument("name", choices=["gap"])
    parser.add_argument("dest")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    print(write_gap_fixture(args.dest, args.seed))


if __name__ == "__main__":
    main()
