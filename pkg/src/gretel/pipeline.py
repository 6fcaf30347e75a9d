"""Pipeline stages: ingest -> retrieve -> trial -> rerank -> eval.

Each stage reads the previous stage's JSONL artifact from the output
directory and writes its own. Every artifact opens with a header line
carrying the config digest; a stage refuses artifacts from another digest.
"""

from __future__ import annotations

import json
import logging
from contextlib import ExitStack
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator

from .config import RunConfig
from .corpus import Corpus, QueryRecord, load_corpus, load_queries
from .evalharness import MetricsReport, evaluate
from .evidence import EvidenceTuple
from .llm import HTTPProvider, Provider, ScriptedProvider
from .rerank import RankedOutcome, rerank_deterministic, rerank_llm
from .retriever import Candidate, CandidateList, EmbeddingClient, RetrievalError, Retriever, build_index
from .sandbox.executor import Executor, allowlist_from_env
from .sandbox.mock import load_scenario, serve_mock
from .trial import TrialConfig, TrialRunner

logger = logging.getLogger(__name__)

CANDIDATES = "candidates.jsonl"
EVIDENCE = "evidence.jsonl"
RERANKED = "reranked.jsonl"
INGEST = "ingest.json"

Key = tuple[str, str]


class StageError(Exception):
    """A stage failed. ``kind`` selects the exit code: 'data' (3) or 'runtime' (4)."""

    def __init__(self, stage: str, message: str, *, query_id: str | None = None, kind: str = "data") -> None:
        where = f"[{stage}]" + (f" query {query_id}:" if query_id else "")
        super().__init__(f"{where} {message}")
        self.stage = stage
        self.query_id = query_id
        self.kind = kind


# -- artifact io ---------------------------------------------------------------

def write_jsonl(path: Path, artifact: str, digest: str, records: list[dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"artifact": artifact, "config_digest": digest}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=False) + "\n")
    return path


def read_jsonl(path: Path, artifact: str, digest: str, stage: str) -> Iterator[dict[str, Any]]:
    if not path.exists():
        raise StageError(stage, f"missing upstream artifact: expected {path}")
    with path.open("r", encoding="utf-8") as fh:
        header = json.loads(fh.readline() or "{}")
        if header.get("artifact") != artifact:
            raise StageError(stage, f"{path} is not a {artifact} artifact")
        if header.get("config_digest") != digest:
            raise StageError(
                stage,
                f"{path} was produced under config digest {header.get('config_digest')}, current is {digest}",
            )
        for line in fh:
            if line.strip():
                yield json.loads(line)


@dataclass
class Run:
    """Lazily loaded state shared by the stages of one invocation."""

    config: RunConfig
    _corpus: Corpus | None = field(default=None, init=False)
    _queries: list[QueryRecord] | None = field(default=None, init=False)
    _digest: str | None = field(default=None, init=False)

    @property
    def digest(self) -> str:
        if self._digest is None:
            self._digest = self.config.digest()
        return self._digest

    @property
    def out(self) -> Path:
        return self.config.output_dir

    @property
    def corpus(self) -> Corpus:
        if self._corpus is None:
            path = self.config.path("tools")
            if path is None or not path.exists():
                raise StageError("ingest", f"tools file not found: {path}")
            self._corpus = load_corpus(path)
        return self._corpus

    @property
    def queries(self) -> list[QueryRecord]:
        if self._queries is None:
            path = self.config.path("queries")
            if path is None or not path.exists():
                raise StageError("ingest", f"queries file not found: {path}")
            self._queries = load_queries(path, self.corpus)
        return self._queries

    def provider(self) -> Provider:
        llm = self.config.llm
        if llm.mode == "scripted":
            path = self.config.script_path
            if path is None or not path.exists():
                raise StageError("llm", f"script file not found: {path}")
            return ScriptedProvider.from_file(path)
        return HTTPProvider(
            llm.endpoint,
            llm.model,
            api_key_env=llm.api_key_env,
            timeout=llm.timeout_ms / 1000.0,
            max_in_flight=self.config.trial.max_concurrency,
        )

    # -- artifact readers --------------------------------------------------------

    def read_candidates(self, stage: str) -> dict[str, CandidateList]:
        out: dict[str, CandidateList] = {}
        for rec in read_jsonl(self.out / CANDIDATES, "candidates", self.digest, stage):
            ranked = tuple(Candidate.from_dict(c) for c in rec["ranked"])
            out[rec["query_id"]] = CandidateList(rec["query_id"], ranked, rec["k"])
        return out

    def read_evidence(self, stage: str) -> dict[str, dict[Key, EvidenceTuple]]:
        out: dict[str, dict[Key, EvidenceTuple]] = {}
        for rec in read_jsonl(self.out / EVIDENCE, "evidence", self.digest, stage):
            out[rec["query_id"]] = {
                (e["tool_id"], e["api_name"]): EvidenceTuple.from_dict(e) for e in rec["evidence"]
            }
        return out

    def read_reranked(self, stage: str) -> dict[str, RankedOutcome]:
        return {
            rec["query_id"]: RankedOutcome.from_dict(rec)
            for rec in read_jsonl(self.out / RERANKED, "reranked", self.digest, stage)
        }


# -- stages --------------------------------------------------------------------

def ingest(run: Run) -> Path:
    corpus, queries = run.corpus, run.queries
    run.out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "artifact": "ingest",
        "config_digest": run.digest,
        "tool_count": len(corpus),
        "api_count": len(corpus.pairs()),
        "query_count": len(queries),
        "unlabeled_queries": [q.query_id for q in queries if not q.relevant],
        "warnings": list(corpus.warnings),
    }
    path = run.out / INGEST
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def retrieve(run: Run) -> Path:
    cfg = run.config.retriever
    try:
        index = build_index(run.corpus, k1=cfg.k1, b=cfg.b)
    except RetrievalError as exc:
        raise StageError("retrieve", str(exc)) from exc
    embedder = EmbeddingClient(cfg.embedding_endpoint) if cfg.embedding_endpoint and cfg.alpha > 0 else None
    retriever = Retriever(index, alpha=cfg.alpha, embedder=embedder)
    records = []
    for q in run.queries:
        try:
            cands = retriever.retrieve(q.text, cfg.k, query_id=q.query_id)
        except RetrievalError as exc:
            raise StageError("retrieve", str(exc), query_id=q.query_id) from exc
        records.append({"query_id": q.query_id, "k": cands.k, "ranked": [c.to_dict() for c in cands]})
    return write_jsonl(run.out / CANDIDATES, "candidates", run.digest, records)


def trial(run: Run) -> Path:
    cfg = run.config
    candidates = run.read_candidates("trial")
    queries = {q.query_id: q for q in run.queries}
    provider = run.provider()
    trial_cfg = TrialConfig(
        timeout_ms=cfg.trial.timeout_ms,
        max_concurrency=cfg.trial.max_concurrency,
        simulation_enabled=cfg.trial.simulation_enabled,
        cache_planned_calls=cfg.trial.cache_planned_calls,
    )
    records = []
    with ExitStack() as stack:
        base_url = cfg.sandbox.base_url or None
        hosts = set(cfg.sandbox.allowlist)
        scenario_path = cfg.path("scenario")
        if scenario_path is not None:
            if not scenario_path.exists():
                raise StageError("trial", f"scenario file not found: {scenario_path}")
            scenario = load_scenario(scenario_path, run.corpus)
            try:
                mock = serve_mock(scenario, run.corpus, port=cfg.sandbox.mock_port, host=cfg.sandbox.mock_host)
            except Exception as exc:
                raise StageError("trial", f"mock server failed to start: {exc}", kind="runtime") from exc
            stack.callback(mock.stop)
            base_url = mock.url
            hosts.add(mock.host)
        executor = stack.enter_context(Executor(
            allowlist_from_env(hosts),
            base_url=base_url,
            timeout_s=cfg.sandbox.timeout_ms / 1000.0,
            response_cap=cfg.sandbox.response_cap_bytes,
        ))
        runner = TrialRunner(run.corpus, provider, executor, trial_cfg)
        for qid, cands in candidates.items():
            if qid not in queries:
                raise StageError("trial", "candidates reference an unknown query", query_id=qid)
            if not len(cands):
                records.append({"query_id": qid, "evidence": []})
                continue
            evidence = runner.run_all_trials(queries[qid].text, cands)
            records.append({
                "query_id": qid,
                "evidence": [{"tool_id": t, "api_name": a, **ev.to_dict()} for (t, a), ev in evidence.items()],
            })
    return write_jsonl(run.out / EVIDENCE, "evidence", run.digest, records)


def rerank(run: Run) -> Path:
    cfg = run.config.rerank
    candidates = run.read_candidates("rerank")
    evidence = run.read_evidence("rerank")
    queries = {q.query_id: q for q in run.queries}
    provider = run.provider() if cfg.mode == "llm" else None
    records = []
    for qid, cands in candidates.items():
        if qid not in evidence:
            raise StageError("rerank", "no evidence for query", query_id=qid)
        if not len(cands):
            records.append(RankedOutcome(qid, ()).to_dict())
            continue
        try:
            if provider is not None:
                outcome = rerank_llm(queries[qid].text, cands, evidence[qid], provider, run.corpus,
                                     latency_tiebreak=cfg.latency_tiebreak, query_id=qid)
            else:
                outcome = rerank_deterministic(cands, evidence[qid], latency_tiebreak=cfg.latency_tiebreak,
                                               query_id=qid)
        except ValueError as exc:
            raise StageError("rerank", str(exc), query_id=qid) from exc
        records.append(outcome.to_dict())
    return write_jsonl(run.out / RERANKED, "reranked", run.digest, records)


def eval_stage(run: Run, *, figures: bool | None = None) -> MetricsReport:
    cfg = run.config.eval
    candidates = run.read_candidates("eval")
    outputs: dict[str, dict[str, list[Key]]] = {"base": {qid: c.keys() for qid, c in candidates.items()}}
    if (run.out / RERANKED).exists():
        outputs["gretel"] = {qid: o.keys() for qid, o in run.read_reranked("eval").items()}
    evidence = None
    if (run.out / EVIDENCE).exists():
        evidence = run.read_evidence("eval")
    elif cfg.pass_rate:
        raise StageError("eval", f"evidence required for pass_rate (expected {run.out / EVIDENCE})")
    try:
        report = evaluate(
            outputs,
            run.queries,
            list(cfg.k_values),
            evidence=evidence,
            pass_rate=cfg.pass_rate,
            pass_rate_requires_relevance=cfg.pass_rate_requires_relevance,
            config_digest=run.digest,
        )
    except ValueError as exc:
        raise StageError("eval", str(exc)) from exc
    report.write(run.out, generated_at=datetime.now(timezone.utc).isoformat(timespec="seconds"))
    want_figures = cfg.figures if figures is None else figures
    if want_figures:
        from .plotting import write_figures

        write_figures(report, run.out)
    return report


STAGES = {
    "ingest": ingest,
    "retrieve": retrieve,
    "trial": trial,
    "rerank": rerank,
    "eval": eval_stage,
}


def run_pipeline(config: RunConfig) -> MetricsReport:
    run = Run(config)
    ingest(run)
    retrieve(run)
    trial(run)
    rerank(run)
    return eval_stage(run)
