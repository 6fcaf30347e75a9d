from __future__ import annotations

import itertools
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gretel.corpus import load_corpus
from gretel.evidence import TrialStatus, format_call
from gretel.llm import CompletionResult, ScriptedProvider
from gretel.retriever import Candidate, CandidateList
from gretel.sandbox.executor import ExecutionResult
from gretel.trial import (
    ExecutionCache,
    PlanningFailure,
    TrialConfig,
    TrialRunner,
    coerce,
    validate_bindings,
)
from helpers import (
    EXEC_OUTCOMES,
    PLAN_OUTCOMES,
    SIM_OUTCOMES,
    CountingProvider,
    StubExecutor,
    api_dict,
    corpus_of,
    expected_branch,
    param_dict,
    run_branch,
    tool_dict,
)

FLIGHT_QUERY = "Find me a one-way flight from San Francisco to New York for next Tuesday"


@pytest.mark.parametrize("plan, execute, sim", list(itertools.product(PLAN_OUTCOMES, EXEC_OUTCOMES, SIM_OUTCOMES)))
def test_branch_table(plan, execute, sim):
    ev, executor, provider = run_branch(plan, execute, sim)
    status, sim_used, stages = expected_branch(plan, execute, sim)
    assert (ev.status.value, ev.metadata.simulation_used) == (status, sim_used)
    assert ev.stages == stages
    # simulate is prompted exactly when the transcript shows a simulate stage
    assert ("simulator" in provider.roles) == ("simulate" in stages)
    assert len(executor.calls) == (0 if plan == "fail" else 1)
    assert ev.metadata.simulation_used == ("simulate" in ev.stages)


def test_planning_failure_carries_nothing():
    ev, _, _ = run_branch("fail", "success", "ok")
    assert ev.metadata.http_status is None and ev.call is None
    assert ev.result.startswith("INVALID_JSON")


def test_simulated_payload_and_disabled_tag():
    ev, _, _ = run_branch("ok", "error", "ok")
    assert ev.result == {"simulated": True}
    assert ev.metadata.error_class == "auth" and ev.metadata.http_status == 401
    ev, _, _ = run_branch("ok", "error", "disabled")
    assert ev.result == "simulation_disabled" and ev.metadata.tag == "simulation_disabled"


# -- planning ---------------------------------------------------------------------

@pytest.fixture
def flights(flights_config):
    d = flights_config.parent
    return load_corpus(d / "tools.jsonl"), ScriptedProvider.from_file(d / "script.json")


def _runner(corpus, provider, result=None, **cfg) -> TrialRunner:
    return TrialRunner(corpus, provider, StubExecutor(result or ExecutionResult("success", {"x": 1}, None, 200)),
                       TrialConfig(**cfg))


def test_flight_planner_extracts_kayak_bindings(flights):
    corpus, provider = flights
    tool = corpus["kayak"]
    planned = _runner(corpus, provider).plan(FLIGHT_QUERY, tool, tool.api("search_flights"))
    assert planned.bindings["from"] == "SFO" and planned.bindings["to"] == "JFK"
    assert planned.bindings["date"]
    assert planned.formatted == format_call("Kayak", "search_flights", planned.bindings)


def test_flight_planner_fails_on_carrier_code(flights):
    corpus, provider = flights
    tool = corpus["flightspro"]
    planned = _runner(corpus, provider).plan(FLIGHT_QUERY, tool, tool.api("search"))
    assert isinstance(planned, PlanningFailure)
    assert "missing mandatory parameter carrier_code" in planned.error_msg


def _single(api, response):
    corpus = corpus_of(tool_dict("t", "tool", [api]))
    provider = ScriptedProvider.from_entries([{"contains": "You are the Planner", "response": response}])
    runner = _runner(corpus, provider)
    return runner.plan("q", corpus["t"], corpus["t"].apis[0])


def test_zero_parameter_api_plans_empty_bindings():
    planned = _single(api_dict("ping"), {})
    assert planned.bindings == {} and planned.formatted == "T.ping()"


@pytest.mark.parametrize(
    "response, cause, fragment",
    [
        ("plain prose", "invalid_json", "INVALID_JSON"),
        ([1, 2], "invalid_json", "not a JSON object"),
        ({"error": "cannot infer city"}, "planner_refused", "cannot infer city"),
        ({"city": "Paris", "units": "metric"}, "validation", "unknown parameter units"),
        ({"city": 3}, "validation", "expects string"),
        ({"days": "2"}, "validation", "missing mandatory parameter city"),
    ],
)
def test_planning_failures(response, cause, fragment):
    api = api_dict("forecast", [param_dict("city"), param_dict("days", "integer", required=False)])
    planned = _single(api, response)
    assert isinstance(planned, PlanningFailure)
    assert planned.cause == cause and fragment in planned.error_msg


def test_provider_error_is_planning_failure():
    corpus = corpus_of(tool_dict("t"))
    planned = _runner(corpus, ScriptedProvider()).plan("q", corpus["t"], corpus["t"].apis[0])
    assert isinstance(planned, PlanningFailure) and planned.cause == "provider_error"
    assert "unscripted prompt" in planned.error_msg


def test_coercion_and_null_optional():
    api = api_dict("forecast", [param_dict("city"), param_dict("days", "integer", required=False),
                                param_dict("lat", "number", required=False)])
    planned = _single(api, {"city": "Paris", "days": "3", "lat": "48.85"})
    assert planned.bindings == {"city": "Paris", "days": 3, "lat": 48.85}
    planned = _single(api, {"city": "Paris", "days": None})
    assert planned.bindings == {"city": "Paris"}


@pytest.mark.parametrize(
    "value, kind, ok",
    [("12", "integer", True), ("1.5", "integer", False), (True, "integer", False), ("-2e3", "number", True),
     ("abc", "number", False), (False, "boolean", True), ([1], "array", True), ({}, "object", True),
     (1, "string", False)],
)
def test_coerce(value, kind, ok):
    assert coerce(value, kind)[0] is ok


@given(st.dictionaries(st.sampled_from(["a", "b", "c", "zz"]),
                       st.one_of(st.none(), st.text(max_size=3), st.integers(), st.booleans()), max_size=4))
def test_validated_bindings_satisfy_plannedcall_invariants(raw):
    corpus = corpus_of(tool_dict("t", apis=[api_dict("x", [param_dict("a"), param_dict("b", "integer"),
                                                          param_dict("c", "boolean", required=False)])]))
    api = corpus["t"].apis[0]
    clean, problems = validate_bindings(api, raw)
    if not problems:
        assert {p.name for p in api.required_params} <= set(clean)
        for name, value in clean.items():
            assert coerce(value, api.param(name).kind) == (True, value)


# -- whole trials ---------------------------------------------------------------

def test_trial_budget_exceeded_is_tagged():
    class Slow(StubExecutor):
        def execute(self, call, api, timeout_s=None):
            time.sleep(0.08)
            return super().execute(call, api, timeout_s)

    corpus = corpus_of(tool_dict("t"))
    provider = ScriptedProvider.from_entries([{"contains": "Planner", "response": {}}])
    runner = TrialRunner(corpus, provider, Slow(ExecutionResult("success", {"a": 1}, None, 200)),
                         TrialConfig(timeout_ms=20))
    ev = runner.run_trial("q", Candidate("t", "lookup", 1.0))
    assert ev.status is TrialStatus.SIMULATION_FAILED
    assert ev.result == "trial_timeout" and ev.metadata.tag == "trial_timeout"


def _multi_fixture():
    tools = [tool_dict(f"t{i}", f"tool {i}", [api_dict("a", [param_dict("q")])]) for i in range(5)]
    corpus = corpus_of(*tools)
    entries = [
        {"contains": ["You are the Planner", '"tool_id": "t0"'], "response": "nope"},
        {"contains": ["You are the Planner"], "response": {"q": "v"}},
        {"contains": ["You are the Simulator", '"tool_id": "t2"'], "response": {"sim": 1}},
        {"contains": ["You are the Simulator"], "response": "no"},
    ]
    results = {
        "t1": ExecutionResult("success", {"ok": 1}, None, 200, 10),
        "t2": ExecutionResult("error", None, "auth", 401, 10),
        "t3": ExecutionResult("error", None, "server_error", 500, 10),
        "t4": ExecutionResult("empty", {}, None, 200, 10),
    }

    class ByTool:
        def execute(self, call, api, timeout_s=None):
            time.sleep(0.001 * (hash(call.tool_id) % 5))
            return results[call.tool_id]

    cands = CandidateList("q", tuple(Candidate(f"t{i}", "a", 5.0 - i, fused_score=1 - i / 5) for i in range(5)), 5)
    return corpus, ScriptedProvider.from_entries(entries), ByTool(), cands


def test_run_all_trials_mixed_outcomes_matches_sequential():
    corpus, provider, executor, cands = _multi_fixture()
    runner = TrialRunner(corpus, provider, executor)
    sequential = {c.key: runner.run_trial("q", c) for c in cands}
    for width in (1, 3, 8):
        assert runner.run_all_trials("q", cands, max_concurrency=width) == sequential
    statuses = [ev.status.value for ev in sequential.values()]
    assert statuses == ["PLANNING_FAILED", "SUCCESS_REAL", "SUCCESS_SIMULATED", "SIMULATION_FAILED",
                        "OTHER_NONERROR"]
    assert list(runner.run_all_trials("q", cands)) == cands.keys()


def test_all_plans_fail():
    corpus = corpus_of(*[tool_dict(f"t{i}") for i in range(3)])
    runner = _runner(corpus, ScriptedProvider.from_entries([{"contains": "Planner", "response": "no"}]))
    out = runner.run_all_trials("q", [Candidate(f"t{i}", "lookup", 1.0) for i in range(3)])
    assert [e.status for e in out.values()] == [TrialStatus.PLANNING_FAILED] * 3


def test_no_candidates():
    with pytest.raises(ValueError, match="no candidates"):
        _runner(corpus_of(tool_dict("t")), ScriptedProvider()).run_all_trials("q", [])


def test_crashing_trial_does_not_abort_batch():
    class Boom:
        def complete(self, req):
            if '"tool_id": "t1"' in req.prompt:
                raise RuntimeError("kaboom")
            return CompletionResult(text="{}")

    corpus = corpus_of(*[tool_dict(f"t{i}") for i in range(3)])
    runner = TrialRunner(corpus, Boom(), StubExecutor(ExecutionResult("success", {"a": 1}, None, 200)))
    out = runner.run_all_trials("q", [Candidate(f"t{i}", "lookup", 1.0) for i in range(3)], max_concurrency=3)
    assert out[("t1", "lookup")].metadata.tag == "internal_error"
    assert out[("t0", "lookup")].status is TrialStatus.SUCCESS_REAL


def test_execution_cache_runs_once_under_contention():
    cache = ExecutionCache()
    calls = []

    def run():
        calls.append(1)
        time.sleep(0.02)
        return ExecutionResult("success", {"a": 1}, None, 200)

    threads = [threading.Thread(target=cache.get_or_run, args=(("t", "a", "T.a()"), run)) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(calls) == 1


def test_disabled_simulation_never_prompts_simulator():
    corpus, provider, executor, cands = _multi_fixture()
    counting = CountingProvider(provider)
    runner = TrialRunner(corpus, counting, executor, TrialConfig(simulation_enabled=False))
    out = runner.run_all_trials("q", cands)
    assert "simulator" not in counting.roles
    assert not any(ev.metadata.simulation_used for ev in out.values())


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(5)))
def test_evidence_independent_of_candidate_order(order):
    corpus, provider, executor, cands = _multi_fixture()
    runner = TrialRunner(corpus, provider, executor)
    base = runner.run_all_trials("q", cands, max_concurrency=4)
    shuffled = [cands.ranked[i] for i in order]
    out = runner.run_all_trials("q", shuffled, max_concurrency=4)
    assert dict(out) == dict(base)
