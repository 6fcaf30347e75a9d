"""Trial-based evidence generation: plan a call, execute it, fall back to simulation.

One trial per candidate. Each trial is strictly sequential::

    plan ──fail──> PLANNING_FAILED
      │
    execute ──success──> SUCCESS_REAL
      │  └──empty──────> OTHER_NONERROR
      └──error──> simulate ──ok──> SUCCESS_SIMULATED
                           └─fail─> SIMULATION_FAILED

Failures never raise; they are encoded in the returned :class:`EvidenceTuple`.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterable

from .corpus import ApiSpec, Corpus, ToolSpec
from .evidence import (
    EvidenceTuple,
    PlannedCall,
    StageRecord,
    TrialMetadata,
    TrialStatus,
    format_call,
)
from .llm import INVALID_JSON, CompletionRequest, Provider, parse_json_payload, render
from .retriever import Candidate, CandidateList
from .sandbox.executor import ExecutionResult, Executor, HostNotAllowedError, SandboxError

logger = logging.getLogger(__name__)

_INT_RE = re.compile(r"[+-]?\d+")
_NUM_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")

Key = tuple[str, str]


@dataclass(frozen=True)
class TrialConfig:
    timeout_ms: int = 10_000
    max_concurrency: int = 4
    simulation_enabled: bool = True
    cache_planned_calls: bool = True


@dataclass(frozen=True)
class PlanningFailure:
    error_msg: str
    cause: str  # provider_error | invalid_json | planner_refused | validation


@dataclass(frozen=True)
class SimulationFailure:
    reason: str


# -- prompt material ----------------------------------------------------------

def api_spec_text(tool: ToolSpec, api: ApiSpec) -> str:
    spec = {"tool_id": tool.tool_id, "tool": tool.name, "tool_description": tool.description, **api.to_dict()}
    return json.dumps(spec, indent=2, ensure_ascii=False)


def required_params_text(api: ApiSpec) -> str:
    lines = [f"- {p.name} ({p.kind}, in {p.location}): {p.description}".rstrip(": ") for p in api.required_params]
    return "\n".join(lines) if lines else "(none)"


# -- binding validation -------------------------------------------------------

def coerce(value: Any, kind: str) -> tuple[bool, Any]:
    """Check ``value`` against a declared kind. Numeric strings coerce to integer/number."""
    if kind == "string":
        return isinstance(value, str), value
    if kind == "integer":
        if isinstance(value, int) and not isinstance(value, bool):
            return True, value
        if isinstance(value, str) and _INT_RE.fullmatch(value.strip()):
            return True, int(value.strip())
        return False, value
    if kind == "number":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return True, value
        if isinstance(value, str) and _NUM_RE.fullmatch(value.strip()):
            s = value.strip()
            return True, int(s) if _INT_RE.fullmatch(s) else float(s)
        return False, value
    if kind == "boolean":
        return isinstance(value, bool), value
    if kind == "array":
        return isinstance(value, list), value
    if kind == "object":
        return isinstance(value, dict), value
    return False, value


def validate_bindings(api: ApiSpec, raw: dict[str, Any]) -> tuple[dict[str, Any], list[str]]:
    """Return (clean bindings, problems). ``null`` on an optional parameter means "omit"."""
    problems: list[str] = []
    clean: dict[str, Any] = {}
    for name, value in raw.items():
        spec = api.param(name)
        if spec is None:
            problems.append(f"unknown parameter {name}")
            continue
        if value is None:
            continue
        ok, coerced = coerce(value, spec.kind)
        if not ok:
            problems.append(f"parameter {name} expects {spec.kind}, got {type(value).__name__}")
            continue
        clean[name] = coerced
    # a required value of the wrong kind is already reported above
    for p in api.required_params:
        if raw.get(p.name) is None:
            problems.append(f"missing mandatory parameter {p.name}")
    return clean, problems


# -- execution cache ----------------------------------------------------------

class _Pending:
    __slots__ = ("done", "value")

    def __init__(self) -> None:
        self.done = threading.Event()
        self.value: ExecutionResult | None = None


class ExecutionCache:
    """Per-query memo of executions keyed on the canonical call; concurrent duplicates wait."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: dict[tuple, _Pending] = {}

    def get_or_run(self, key: tuple, fn: Callable[[], ExecutionResult]) -> ExecutionResult:
        with self._lock:
            entry = self._entries.get(key)
            owner = entry is None
            if owner:
                entry = self._entries[key] = _Pending()
        if owner:
            try:
                entry.value = fn()
            finally:
                entry.done.set()
        else:
            entry.done.wait()
        assert entry.value is not None
        return entry.value


def _now_ms() -> float:
    return time.time() * 1000.0


class TrialRunner:
    def __init__(
        self,
        corpus: Corpus,
        provider: Provider,
        executor: Executor,
        config: TrialConfig = TrialConfig(),
    ) -> None:
        self.corpus = corpus
        self.provider = provider
        self.executor = executor
        self.config = config

    # -- stages ---------------------------------------------------------------

    def plan(self, query: str, tool: ToolSpec, api: ApiSpec) -> PlannedCall | PlanningFailure:
        prompt = render("planner", {
            "query": query,
            "api_spec": api_spec_text(tool, api),
            "required_params": required_params_text(api),
        })
        res = self.provider.complete(CompletionRequest(prompt))
        if not res.ok:
            return PlanningFailure(f"ERROR: planner provider error: {res.diagnostic}", "provider_error")
        parsed = parse_json_payload(res.text)
        if parsed is INVALID_JSON:
            return PlanningFailure("INVALID_JSON: planner output is not JSON", "invalid_json")
        if not isinstance(parsed, dict):
            return PlanningFailure("INVALID_JSON: planner output is not a JSON object", "invalid_json")
        if set(parsed) == {"error"} and api.param("error") is None:
            return PlanningFailure(f"ERROR: planner refused: {parsed['error']}", "planner_refused")
        bindings, problems = validate_bindings(api, parsed)
        if problems:
            return PlanningFailure("; ".join(problems), "validation")
        return PlannedCall(tool.tool_id, api.api_name, bindings, format_call(tool.name, api.api_name, bindings))

    def simulate(self, query: str, tool: ToolSpec, api: ApiSpec, call: PlannedCall,
                 failure: ExecutionResult) -> Any:
        """Ask the simulator for a plausible response; returns the JSON value or a SimulationFailure."""
        failure_text = json.dumps({
            "error_class": failure.error_class,
            "http_status": failure.http_status,
            "body": failure.payload,
            "diagnostic": failure.diagnostic,
        }, ensure_ascii=False, default=str)
        prompt = render("simulator", {
            "query": query,
            "api_spec": api_spec_text(tool, api),
            "api_call": call.formatted,
            "failure": failure_text,
        })
        res = self.provider.complete(CompletionRequest(prompt))
        if not res.ok:
            return SimulationFailure(f"simulator provider error: {res.diagnostic}")
        parsed = parse_json_payload(res.text)
        if parsed is INVALID_JSON:
            return SimulationFailure("simulator output is not JSON")
        return parsed

    def _execute(self, call: PlannedCall, api: ApiSpec, timeout_s: float) -> ExecutionResult:
        try:
            return self.executor.execute(call, api, timeout_s=timeout_s)
        except HostNotAllowedError as exc:
            return ExecutionResult("error", None, "connection", diagnostic=f"refused: {exc}")
        except SandboxError as exc:
            return ExecutionResult("error", None, "connection", diagnostic=str(exc))

    # -- one trial --------------------------------------------------------------

    def run_trial(self, query: str, candidate: Candidate, api: ApiSpec | None = None,
                  cache: ExecutionCache | None = None) -> EvidenceTuple:
        tool = self.corpus[candidate.tool_id]
        api = api or tool.api(candidate.api_name)
        if api is None:
            raise KeyError(f"{candidate.tool_id}/{candidate.api_name}")
        deadline = time.perf_counter() + self.config.timeout_ms / 1000.0
        transcript: list[StageRecord] = []

        def over_budget() -> bool:
            return time.perf_counter() > deadline

        def timed_out(meta: TrialMetadata, call: str | None) -> EvidenceTuple:
            meta = TrialMetadata(meta.simulation_used, meta.latency_ms, meta.http_status, meta.error_class, "trial_timeout")
            return EvidenceTuple(TrialStatus.SIMULATION_FAILED, "trial_timeout", meta, tuple(transcript), call)

        # planning
        t0 = _now_ms()
        planned = self.plan(query, tool, api)
        if isinstance(planned, PlanningFailure):
            transcript.append(StageRecord("plan", "failed", planned.error_msg, t0, _now_ms()))
            meta = TrialMetadata(simulation_used=False, latency_ms=0, tag=planned.cause)
            return EvidenceTuple(TrialStatus.PLANNING_FAILED, planned.error_msg, meta, tuple(transcript))
        transcript.append(StageRecord("plan", "ok", planned.formatted, t0, _now_ms()))
        if over_budget():
            return timed_out(TrialMetadata(), planned.formatted)

        # real execution
        t0 = _now_ms()
        remaining = max(0.001, deadline - time.perf_counter())
        if cache is not None and self.config.cache_planned_calls:
            key = (planned.tool_id, planned.api_name, planned.formatted)
            result = cache.get_or_run(key, lambda: self._execute(planned, api, remaining))
        else:
            result = self._execute(planned, api, remaining)
        transcript.append(StageRecord("execute", result.status, result.diagnostic or "", t0, _now_ms()))
        base_meta = dict(latency_ms=result.latency_ms, http_status=result.http_status)

        if result.status == "success":
            meta = TrialMetadata(simulation_used=False, **base_meta)
            if over_budget():
                return timed_out(meta, planned.formatted)
            return EvidenceTuple(TrialStatus.SUCCESS_REAL, result.payload, meta, tuple(transcript), planned.formatted)

        if result.status == "error":
            if over_budget():
                return timed_out(TrialMetadata(error_class=result.error_class, **base_meta), planned.formatted)
            if not self.config.simulation_enabled:
                meta = TrialMetadata(simulation_used=False, error_class=result.error_class,
                                     tag="simulation_disabled", **base_meta)
                return EvidenceTuple(TrialStatus.SIMULATION_FAILED, "simulation_disabled", meta,
                                     tuple(transcript), planned.formatted)
            t0 = _now_ms()
            simulated = self.simulate(query, tool, api, planned, result)
            failed = isinstance(simulated, SimulationFailure)
            transcript.append(StageRecord("simulate", "failed" if failed else "ok",
                                          simulated.reason if failed else "", t0, _now_ms()))
            if failed:
                meta = TrialMetadata(simulation_used=True, error_class=result.error_class,
                                     tag="simulation_failed", **base_meta)
                status, payload = TrialStatus.SIMULATION_FAILED, simulated.reason
            else:
                meta = TrialMetadata(simulation_used=True, error_class=result.error_class, **base_meta)
                status, payload = TrialStatus.SUCCESS_SIMULATED, simulated
            if over_budget():
                return timed_out(meta, planned.formatted)
            return EvidenceTuple(status, payload, meta, tuple(transcript), planned.formatted)

        # neither success nor error: completed with an empty payload
        meta = TrialMetadata(simulation_used=False, **base_meta)
        if over_budget():
            return timed_out(meta, planned.formatted)
        return EvidenceTuple(TrialStatus.OTHER_NONERROR, result.payload, meta, tuple(transcript), planned.formatted)

    # -- all candidates -----------------------------------------------------------

    def _guarded(self, query: str, candidate: Candidate, cache: ExecutionCache) -> EvidenceTuple:
        try:
            return self.run_trial(query, candidate, cache=cache)
        except Exception as exc:  # one broken trial must not sink the batch
            logger.exception("trial %s/%s crashed", candidate.tool_id, candidate.api_name)
            meta = TrialMetadata(tag="internal_error")
            return EvidenceTuple(TrialStatus.SIMULATION_FAILED, f"internal error: {exc}", meta)

    def run_all_trials(self, query: str, candidates: CandidateList | Iterable[Candidate],
                       max_concurrency: int | None = None) -> dict[Key, EvidenceTuple]:
        """One evidence tuple per candidate, keyed by (tool_id, api_name), in candidate order."""
        cands = list(candidates.ranked if isinstance(candidates, CandidateList) else candidates)
        if not cands:
            raise ValueError("no candidates")
        width = max(1, max_concurrency or self.config.max_concurrency)
        cache = ExecutionCache()
        if width == 1:
            results = {c.key: self._guarded(query, c, cache) for c in cands}
        else:
            with ThreadPoolExecutor(max_workers=width, thread_name_prefix="trial") as pool:
                futures = {c.key: pool.submit(self._guarded, query, c, cache) for c in cands}
                results = {k: f.result() for k, f in futures.items()}
        return {c.key: results[c.key] for c in cands}
