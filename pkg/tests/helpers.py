"""Builders and stand-ins shared by the test modules."""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from gretel.corpus import build_corpus, parse_tool
from gretel.evidence import PlannedCall
from gretel.sandbox.executor import ExecutionResult


def api_dict(api_name: str = "lookup", params: list[dict] | None = None, **kw: Any) -> dict[str, Any]:
    d = {
        "api_name": api_name,
        "description": kw.pop("description", f"{api_name} endpoint"),
        "method": kw.pop("method", "GET"),
        "endpoint_template": kw.pop("endpoint_template", f"/{api_name}"),
        "requires_auth": kw.pop("requires_auth", False),
        "params": params if params is not None else [],
    }
    d.update(kw)
    return d


def param_dict(name: str, kind: str = "string", required: bool = True, location: str = "query") -> dict[str, Any]:
    return {"name": name, "kind": kind, "required": required, "location": location, "description": name}


def tool_dict(tool_id: str, description: str = "a tool", apis: list[dict] | None = None,
              name: str | None = None) -> dict[str, Any]:
    return {
        "tool_id": tool_id,
        "name": name or tool_id.title(),
        "description": description,
        "apis": apis if apis is not None else [api_dict()],
    }


def corpus_of(*tools: dict):
    return build_corpus(parse_tool(t) for t in tools)


def write_jsonl(path: Path, rows: list[dict]) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


@dataclass
class StubExecutor:
    """Stands in for the sandbox executor: returns one canned result and counts calls."""

    result: ExecutionResult
    calls: list[PlannedCall] = field(default_factory=list)

    def execute(self, call: PlannedCall, api, timeout_s: float | None = None) -> ExecutionResult:
        self.calls.append(call)
        return self.result


def copy_fixture(name: str, dest: Path) -> Path:
    src = resources.files("gretel.data").joinpath(name)
    dest.mkdir(parents=True, exist_ok=True)
    for item in src.iterdir():
        if item.is_file() and not item.name.startswith("__"):
            with resources.as_file(item) as p:
                shutil.copy(p, dest / item.name)
    return dest / "run.toml"


@dataclass
class CountingProvider:
    """Wraps a provider and records which roles were prompted."""

    inner: Any
    roles: list[str] = field(default_factory=list)

    def complete(self, req):
        for role in ("Planner", "Simulator", "Evaluator"):
            if f"You are the {role}" in req.prompt:
                self.roles.append(role.lower())
        return self.inner.complete(req)


# -- plan x execute x simulate branch table --------------------------------------

PLAN_OUTCOMES = ("ok", "fail")
EXEC_OUTCOMES = ("success", "error", "other")
SIM_OUTCOMES = ("ok", "fail", "disabled")

BRANCH_TOOL = tool_dict("probe", "branch probe", [api_dict("run", [param_dict("q")], endpoint_template="/probe")])


def run_branch(plan: str, execute: str, sim: str):
    """Run one trial with every stage outcome forced; returns (evidence, executor, provider)."""
    from gretel.llm import ScriptedProvider
    from gretel.retriever import Candidate
    from gretel.trial import TrialConfig, TrialRunner

    corpus = corpus_of(BRANCH_TOOL)
    entries = [{"contains": ["You are the Planner"],
                "response": {"q": "x"} if plan == "ok" else "I cannot build this call."}]
    entries.append({"contains": ["You are the Simulator"],
                    "response": {"simulated": True} if sim != "fail" else "No idea what it would return."})
    provider = CountingProvider(ScriptedProvider.from_entries(entries))
    result = {
        "success": ExecutionResult("success", {"answer": 1}, None, 200, 5),
        "error": ExecutionResult("error", {"error": "unauthorized"}, "auth", 401, 5, diagnostic="HTTP 401"),
        "other": ExecutionResult("empty", [], None, 200, 5),
    }[execute]
    executor = StubExecutor(result)
    runner = TrialRunner(corpus, provider, executor, TrialConfig(simulation_enabled=sim != "disabled"))
    ev = runner.run_trial("probe query", Candidate("probe", "run", 1.0, fused_score=1.0))
    return ev, executor, provider


def expected_branch(plan: str, execute: str, sim: str) -> tuple[str, bool, list[str]]:
    """(status, simulation_used, stages) read off the plan/execute/simulate algorithm."""
    if plan == "fail":
        return "PLANNING_FAILED", False, ["plan"]
    if execute == "success":
        return "SUCCESS_REAL", False, ["plan", "execute"]
    if execute == "other":
        return "OTHER_NONERROR", False, ["plan", "execute"]
    if sim == "disabled":
        return "SIMULATION_FAILED", False, ["plan", "execute"]
    if sim == "ok":
        return "SUCCESS_SIMULATED", True, ["plan", "execute", "simulate"]
    return "SIMULATION_FAILED", True, ["plan", "execute", "simulate"]
