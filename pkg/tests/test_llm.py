from __future__ import annotations

import json
import threading
import time

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gretel.llm import (
    INVALID_JSON,
    CompletionRequest,
    HTTPProvider,
    PromptError,
    ScriptedProvider,
    load_template,
    parse_json_payload,
    parse_template,
    prompt_digest,
    render,
)

SPEC = '{"api_name": "forecast"}'


def test_templates_carry_required_placeholders():
    assert {"query", "api_spec"} <= set(load_template("planner").placeholders)
    assert {"query", "api_call", "api_spec"} <= set(load_template("simulator").placeholders)
    evaluator = load_template("evaluator")
    assert {"query", "candidates"} <= set(evaluator.placeholders)
    assert "JSON list of [Tool, API] pairs" in evaluator.template


def test_planner_render_contains_bindings():
    out = render("planner", {"query": "weather in Paris", "api_spec": SPEC, "required_params": "- city"})
    assert "weather in Paris" in out and SPEC in out
    assert "{query}" not in out and "{api_spec}" not in out


def test_missing_binding_names_placeholder():
    with pytest.raises(PromptError, match="unbound placeholder api_spec"):
        render("planner", {"query": "q", "required_params": ""})


def test_braces_in_bindings_are_not_reexpanded():
    out = render("planner", {"query": "{api_spec} and {required_params}", "api_spec": "S", "required_params": "R"})
    assert "{api_spec} and {required_params}" in out


_free = st.text(alphabet=st.characters(blacklist_characters="<>"), max_size=30)


@settings(max_examples=60)
@given(a=_free, b=_free, c=_free, d=_free)
def test_render_injective(a, b, c, d):
    tpl = parse_template("role: planner\n---\nQ<{query}>\nS<{api_spec}>\n")
    left = tpl.render({"query": a, "api_spec": b})
    right = tpl.render({"query": c, "api_spec": d})
    assert (left == right) == ((a, b) == (c, d))


def test_template_header_validation():
    with pytest.raises(PromptError):
        parse_template("no header here")
    with pytest.raises(PromptError):
        parse_template("role: critic\n---\nbody")


@pytest.mark.parametrize(
    "text, expected",
    [
        ('{"a":1}', {"a": 1}),
        ("Here you go:\n```json\n{\"from\": \"SFO\"}\n```\nDone.", {"from": "SFO"}),
        ('Sure! {"city": "Paris"} hope that helps', {"city": "Paris"}),
        ('[["Kayak", "search_flights"]]', [["Kayak", "search_flights"]]),
        ("```\n[1, 2]\n```", [1, 2]),
    ],
)
def test_parse_json_payload(text, expected):
    assert parse_json_payload(text) == expected


@pytest.mark.parametrize("text", ["not json at all", "", None, "{broken", "``` nope ```"])
def test_parse_json_payload_invalid(text):
    assert parse_json_payload(text) is INVALID_JSON
    assert not INVALID_JSON


def test_scripted_exact_and_whitespace_tolerant():
    prompt = "Extract parameters for\n  the flight"
    provider = ScriptedProvider.from_prompts({prompt: {"from": "SFO"}})
    assert provider.complete(CompletionRequest(prompt)).text == '{"from": "SFO"}'
    assert provider.complete(CompletionRequest("Extract parameters for the flight")).ok
    assert prompt_digest("a  b\n") == prompt_digest("a b")


def test_scripted_substring_fallback_and_order():
    provider = ScriptedProvider.from_entries([
        {"contains": ["Planner", "kayak"], "response": "first"},
        {"contains": ["Planner"], "response": "second"},
    ])
    assert provider.complete(CompletionRequest("Planner for kayak")).text == "first"
    assert provider.complete(CompletionRequest("Planner for skyscanner")).text == "second"


def test_unscripted_prompt_is_provider_error():
    res = ScriptedProvider().complete(CompletionRequest("anything"))
    assert res.finish_reason == "provider_error"
    assert res.diagnostic == "unscripted prompt"
    assert not res.ok


def test_scripted_is_pure(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps({"entries": [{"contains": "x", "response": [1]}]}))
    provider = ScriptedProvider.from_file(path)
    results = {provider.complete(CompletionRequest("xyz")) for _ in range(5)}
    assert len(results) == 1


def test_script_entry_needs_a_matcher():
    with pytest.raises(PromptError):
        ScriptedProvider.from_entries([{"response": "x"}])


def _http(handler, **kw) -> HTTPProvider:
    return HTTPProvider("http://llm.local/v1/chat/completions", "m", client=httpx.Client(
        transport=httpx.MockTransport(handler)), **kw)


def test_http_provider_round_trip(monkeypatch):
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": '{"a": 1}'}, "finish_reason": "stop"}]})

    monkeypatch.setenv("GRETEL_LLM_API_KEY", "sekret")
    res = _http(handler).complete(CompletionRequest("hello"))
    assert res.ok and res.text == '{"a": 1}'
    assert seen["auth"] == "Bearer sekret"
    assert seen["body"]["messages"] == [{"role": "user", "content": "hello"}]
    assert seen["body"]["temperature"] == 0.0


def test_http_provider_500_and_timeout():
    res = _http(lambda r: httpx.Response(500, text="boom")).complete(CompletionRequest("x"))
    assert res.finish_reason == "provider_error" and res.status_code == 500

    def slow(request):
        raise httpx.ReadTimeout("slow", request=request)

    res = _http(slow).complete(CompletionRequest("x"))
    assert res.finish_reason == "provider_error" and "timeout" in res.diagnostic


def test_http_provider_truncation_and_malformed():
    res = _http(lambda r: httpx.Response(200, json={"choices": [{"message": {"content": "par"},
                                                                  "finish_reason": "length"}]})
                ).complete(CompletionRequest("x"))
    assert res.finish_reason == "truncated"
    res = _http(lambda r: httpx.Response(200, json={"nope": 1})).complete(CompletionRequest("x"))
    assert res.finish_reason == "provider_error"


def test_http_provider_bounds_in_flight():
    active, peak, lock = [0], [0], threading.Lock()

    def handler(request):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.02)
        with lock:
            active[0] -= 1
        return httpx.Response(200, json={"choices": [{"message": {"content": "{}"}}]})

    provider = _http(handler, max_in_flight=2)
    threads = [threading.Thread(target=provider.complete, args=(CompletionRequest("x"),)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] <= 2
