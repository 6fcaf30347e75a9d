"""Embedded mock tool server with per-API failure injection.

A scenario maps ``"tool_id/api_name"`` to a behavior::

    {"kayak/search_flights": {"respond_status": 200,
                              "body": {"flights": [{"to": "{to}"}]},
                              "latency_ms": 120,
                              "require_auth": false,
                              "validate_params": true}}

String values in ``body`` may reference request parameters as ``{name}``.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Mapping
from urllib.parse import parse_qs, unquote, urlsplit

from ..corpus import ApiSpec, Corpus

logger = logging.getLogger(__name__)

_BEHAVIOR_FIELDS = {"respond_status", "body", "latency_ms", "require_auth", "validate_params"}
_SLOT_RE = re.compile(r"\{([^{}]+)\}")
_REF_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ScenarioError(ValueError):
    pass


class MockServerError(RuntimeError):
    pass


@dataclass(frozen=True)
class Behavior:
    respond_status: int = 200
    body: Any = None
    latency_ms: int = 0
    require_auth: bool = False
    validate_params: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "respond_status": self.respond_status,
            "body": self.body,
            "latency_ms": self.latency_ms,
            "require_auth": self.require_auth,
            "validate_params": self.validate_params,
        }


@dataclass(frozen=True)
class MockScenario:
    behaviors: dict[tuple[str, str], Behavior]

    def to_dict(self) -> dict[str, Any]:
        return {f"{t}/{a}": b.to_dict() for (t, a), b in sorted(self.behaviors.items())}


def parse_scenario(data: Mapping[str, Any], corpus: Corpus) -> MockScenario:
    if not isinstance(data, Mapping):
        raise ScenarioError("scenario must be a JSON object")
    behaviors: dict[tuple[str, str], Behavior] = {}
    for key, raw in data.items():
        tool_id, sep, api_name = key.partition("/")
        if not sep:
            raise ScenarioError(f"scenario key {key!r} is not 'tool_id/api_name'")
        try:
            corpus.api(tool_id, api_name)
        except KeyError:
            raise ScenarioError(f"scenario key {key!r} does not name a corpus API") from None
        if not isinstance(raw, Mapping):
            raise ScenarioError(f"{key}: behavior must be an object")
        extra = set(raw) - _BEHAVIOR_FIELDS
        if extra:
            raise ScenarioError(f"{key}: unknown behavior field(s) {', '.join(sorted(extra))}")
        status = raw.get("respond_status", 200)
        latency = raw.get("latency_ms", 0)
        if not isinstance(status, int) or not 100 <= status <= 599:
            raise ScenarioError(f"{key}: respond_status must be an HTTP status code")
        if not isinstance(latency, int) or latency < 0:
            raise ScenarioError(f"{key}: latency_ms must be a non-negative integer")
        behaviors[(tool_id, api_name)] = Behavior(
            respond_status=status,
            body=raw.get("body", {}),
            latency_ms=latency,
            require_auth=bool(raw.get("require_auth", False)),
            validate_params=bool(raw.get("validate_params", False)),
        )
    return MockScenario(behaviors)


def load_scenario(path: str | Path, corpus: Corpus) -> MockScenario:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: malformed JSON ({exc.msg})") from exc
    return parse_scenario(data, corpus)


def render_body(template: Any, values: Mapping[str, Any]) -> Any:
    """Substitute ``{name}`` references; a string that is exactly one reference keeps the value's type."""
    if isinstance(template, str):
        whole = _REF_RE.fullmatch(template)
        if whole and whole.group(1) in values:
            return values[whole.group(1)]
        return _REF_RE.sub(lambda m: str(values.get(m.group(1), m.group(0))), template)
    if isinstance(template, list):
        return [render_body(v, values) for v in template]
    if isinstance(template, dict):
        return {k: render_body(v, values) for k, v in template.items()}
    return template


@dataclass(frozen=True)
class _Route:
    method: str
    pattern: re.Pattern
    key: tuple[str, str]
    api: ApiSpec
    n_slots: int


def _route_for(key: tuple[str, str], api: ApiSpec) -> _Route:
    template = api.endpoint_template
    parts = urlsplit(template)
    path = parts.path if parts.scheme else template.split("?", 1)[0]
    if not path.startswith("/"):
        path = "/" + path
    regex, pos, n = "", 0, 0
    for m in _SLOT_RE.finditer(path):
        regex += re.escape(path[pos:m.start()]) + f"(?P<{m.group(1)}>[^/]+)"
        pos, n = m.end(), n + 1
    regex += re.escape(path[pos:])
    return _Route(api.method, re.compile(regex + r"/?"), key, api, n)


@dataclass(frozen=True)
class RequestRecord:
    method: str
    path: str
    status: int
    tool_id: str | None = None
    api_name: str | None = None
    authorized: bool = False
    params: dict[str, Any] | None = None


class MockServer:
    """Threaded HTTP server; use as a context manager or call start()/stop()."""

    def __init__(self, scenario: MockScenario, corpus: Corpus, host: str = "127.0.0.1", port: int = 0) -> None:
        self.scenario = scenario
        self.routes = sorted(
            (_route_for(key, corpus.api(*key)) for key in scenario.behaviors),
            key=lambda r: (r.n_slots, -len(r.pattern.pattern)),
        )
        self._log: list[RequestRecord] = []
        self._log_lock = threading.Lock()
        try:
            self._httpd = ThreadingHTTPServer((host, port), self._handler_class())
        except OSError as exc:
            raise MockServerError(f"cannot bind mock server to {host}:{port}: {exc}") from exc
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def host(self) -> str:
        return self._httpd.server_address[0]

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    @property
    def request_log(self) -> list[RequestRecord]:
        with self._log_lock:
            return list(self._log)

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="gretel-mock", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        try:
            self._httpd.serve_forever()
        finally:
            self._httpd.server_close()

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _append(self, rec: RequestRecord) -> None:
        with self._log_lock:
            self._log.append(rec)

    def _match(self, method: str, path: str) -> tuple[_Route | None, dict[str, str], bool]:
        path_matched = False
        for route in self.routes:
            m = route.pattern.fullmatch(path)
            if not m:
                continue
            if route.method != method:
                path_matched = True
                continue
            return route, {k: unquote(v) for k, v in m.groupdict().items()}, True
        return None, {}, path_matched

    def _handler_class(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):  # noqa: D401 - route stdlib logging to debug
                logger.debug("mock: " + fmt, *args)

            def _send(self, status: int, payload: Any) -> None:
                data = b"" if payload is None else json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def _handle(self) -> None:
                parts = urlsplit(self.path)
                route, path_values, _matched = server._match(self.command, parts.path)
                auth = self.headers.get("Authorization", "")
                authorized = auth.startswith("Bearer ") and bool(auth[7:].strip())
                if route is None:
                    status = 405 if _matched else 404
                    server._append(RequestRecord(self.command, parts.path, status, authorized=authorized))
                    self._send(status, {"error": "method not allowed" if _matched else "not found"})
                    return

                query = {k: v[-1] for k, v in parse_qs(parts.query, keep_blank_values=True).items()}
                body: dict[str, Any] = {}
                length = int(self.headers.get("Content-Length") or 0)
                if length:
                    try:
                        decoded = json.loads(self.rfile.read(length))
                        body = decoded if isinstance(decoded, dict) else {}
                    except json.JSONDecodeError:
                        body = {}
                values: dict[str, Any] = {**query, **body, **path_values}
                behavior = server.scenario.behaviors[route.key]
                tool_id, api_name = route.key

                if behavior.latency_ms:
                    time.sleep(behavior.latency_ms / 1000.0)
                if behavior.require_auth and not authorized:
                    status, payload = 401, {"error": "authentication required"}
                else:
                    missing = []
                    if behavior.validate_params:
                        for p in route.api.required_params:
                            if p.location == "header":
                                present = self.headers.get(p.name) is not None
                            elif p.location == "body":
                                present = p.name in body
                            elif p.location == "query":
                                present = p.name in query
                            else:
                                present = p.name in path_values
                            if not present:
                                missing.append(p.name)
                    if missing:
                        status, payload = 400, {"error": "missing required parameters", "missing": missing}
                    else:
                        status = behavior.respond_status
                        payload = render_body(behavior.body, values)
                server._append(RequestRecord(self.command, parts.path, status, tool_id, api_name, authorized, values))
                self._send(status, payload)

            do_GET = _handle
            do_POST = _handle

        return Handler


def serve_mock(scenario: MockScenario, corpus: Corpus, port: int = 0, host: str = "127.0.0.1") -> MockServer:
    """Start a mock server in a background thread and return its handle."""
    return MockServer(scenario, corpus, host=host, port=port).start()
