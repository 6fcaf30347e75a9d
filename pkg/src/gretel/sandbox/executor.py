"""Allowlisted HTTP execution of planned calls."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Any, Iterable, Mapping
from urllib.parse import quote, urljoin, urlsplit

import httpx

from ..corpus import ApiSpec
from ..evidence import PlannedCall

logger = logging.getLogger(__name__)

DEFAULT_RESPONSE_CAP = 64 * 1024
DEFAULT_TIMEOUT_S = 5.0
MAX_REDIRECTS = 5

ERROR_CLASSES = ("auth", "client_error", "server_error", "timeout", "connection", "schema")


class SandboxError(Exception):
    pass


class HostNotAllowedError(SandboxError):
    def __init__(self, host: str | None, url: str) -> None:
        super().__init__(f"host {host!r} is not on the allowlist (refused {url})")
        self.host = host
        self.url = url


@dataclass(frozen=True)
class ExecutionResult:
    status: str  # success | error | empty
    payload: Any = None
    error_class: str | None = None
    http_status: int | None = None
    latency_ms: int = 0
    truncated: bool = False
    diagnostic: str | None = None

    def __post_init__(self) -> None:
        if self.status not in ("success", "error", "empty"):
            raise ValueError(f"bad execution status {self.status!r}")
        if self.status == "error" and self.error_class not in ERROR_CLASSES:
            raise ValueError("error results need an error_class")

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "payload": self.payload,
            "error_class": self.error_class,
            "http_status": self.http_status,
            "latency_ms": self.latency_ms,
            "truncated": self.truncated,
            "diagnostic": self.diagnostic,
        }


def is_empty_payload(payload: Any) -> bool:
    return payload is None or payload == {} or payload == [] or payload == ""


def map_response(http_status: int, payload: Any, latency_ms: int = 0, *, parsed: bool = True,
                 truncated: bool = False) -> ExecutionResult:
    """Status-mapping table from an HTTP outcome to an ExecutionResult."""
    if 200 <= http_status < 300:
        if not parsed and not truncated:
            return ExecutionResult("error", payload, "schema", http_status, latency_ms,
                                   diagnostic="response body is not JSON")
        if is_empty_payload(payload):
            return ExecutionResult("empty", payload, None, http_status, latency_ms, truncated)
        return ExecutionResult("success", payload, None, http_status, latency_ms, truncated)
    if http_status in (401, 403):
        cls = "auth"
    elif 500 <= http_status:
        cls = "server_error"
    else:
        cls = "client_error"
    return ExecutionResult("error", payload, cls, http_status, latency_ms, truncated,
                           diagnostic=f"HTTP {http_status}")


def token_env_var(tool_id: str) -> str:
    return "GRETEL_BEARER_" + re.sub(r"[^A-Z0-9]", "_", tool_id.upper())


def allowlist_from_env(extra: Iterable[str] = ()) -> set[str]:
    hosts = {h.strip() for h in os.environ.get("GRETEL_ALLOWLIST", "").split(",") if h.strip()}
    hosts.update(extra)
    return hosts


def _stringify(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True, separators=(",", ":"))
    return str(value)


@dataclass(frozen=True)
class DispatchRecord:
    host: str
    method: str
    url: str


class Executor:
    """Dispatches planned calls to allowlisted hosts only.

    Every request that leaves the process is appended to ``dispatch_log``;
    refused requests are not.
    """

    def __init__(
        self,
        allowlist: Iterable[str],
        *,
        base_url: str | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        response_cap: int = DEFAULT_RESPONSE_CAP,
        tokens: Mapping[str, str] | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.allowlist = {h.strip().lower() for h in allowlist if h.strip()}
        self.base_url = base_url
        self.timeout_s = timeout_s
        self.response_cap = response_cap
        self._tokens = tokens
        self._client = client or httpx.Client(follow_redirects=False)
        self._log_lock = threading.Lock()
        self.dispatch_log: list[DispatchRecord] = []

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "Executor":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def allowed(self, url: str) -> bool:
        parts = urlsplit(url)
        host = (parts.hostname or "").lower()
        if not host:
            return False
        return host in self.allowlist or f"{host}:{parts.port}" in self.allowlist

    def token_for(self, tool_id: str) -> str | None:
        if self._tokens is not None:
            return self._tokens.get(tool_id)
        return os.environ.get(token_env_var(tool_id)) or None

    def build_request(self, call: PlannedCall, api: ApiSpec) -> dict[str, Any]:
        """Serialize bindings by parameter location into an httpx request spec."""
        url = api.endpoint_template
        query: dict[str, str] = {}
        body: dict[str, Any] = {}
        headers: dict[str, str] = {}
        for name, value in call.bindings.items():
            spec = api.param(name)
            location = spec.location if spec else "query"
            if location == "path":
                url = url.replace("{" + name + "}", quote(_stringify(value), safe=""))
            elif location == "body":
                body[name] = value
            elif location == "header":
                headers[name] = _stringify(value)
            else:
                query[name] = _stringify(value)
        if not urlsplit(url).scheme:
            if not self.base_url:
                raise SandboxError(f"relative endpoint {url!r} and no base_url configured")
            url = urljoin(self.base_url.rstrip("/") + "/", url.lstrip("/"))
        token = self.token_for(call.tool_id)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        req: dict[str, Any] = {"method": api.method, "url": url, "params": query, "headers": headers}
        if body or api.method == "POST":
            req["json"] = body
        return req

    def _record(self, method: str, url: str) -> None:
        with self._log_lock:
            self.dispatch_log.append(DispatchRecord(urlsplit(url).hostname or "", method, url))

    def _read_capped(self, resp: httpx.Response) -> tuple[bytes, bool]:
        buf = bytearray()
        for chunk in resp.iter_bytes():
            buf.extend(chunk)
            if len(buf) > self.response_cap:
                return bytes(buf[: self.response_cap]), True
        return bytes(buf), False

    def execute(self, call: PlannedCall, api: ApiSpec, timeout_s: float | None = None) -> ExecutionResult:
        """Run one call. Raises :class:`HostNotAllowedError` before dispatching off-allowlist."""
        req = self.build_request(call, api)
        if not self.allowed(req["url"]):
            raise HostNotAllowedError(urlsplit(req["url"]).hostname, req["url"])
        timeout = self.timeout_s if timeout_s is None else max(0.001, timeout_s)
        start = time.perf_counter()

        def elapsed() -> int:
            return int((time.perf_counter() - start) * 1000)

        method, url = req.pop("method"), req.pop("url")
        try:
            for _ in range(MAX_REDIRECTS + 1):
                self._record(method, url)
                with self._client.stream(method, url, timeout=timeout, **req) as resp:
                    if resp.is_redirect:
                        target = urljoin(url, resp.headers.get("location", ""))
                        if not self.allowed(target):
                            return ExecutionResult("error", None, "client_error", resp.status_code, elapsed(),
                                                   diagnostic=f"redirect to non-allowlisted {target} refused")
                        url = target
                        continue
                    raw, truncated = self._read_capped(resp)
                    status_code = resp.status_code
                break
            else:
                return ExecutionResult("error", None, "client_error", None, elapsed(),
                                       diagnostic="too many redirects")
        except httpx.TimeoutException as exc:
            return ExecutionResult("error", None, "timeout", None, elapsed(), diagnostic=f"timeout: {exc}")
        except httpx.TransportError as exc:
            return ExecutionResult("error", None, "connection", None, elapsed(), diagnostic=f"connection: {exc}")

        text = raw.decode("utf-8", errors="replace")
        if not text.strip():
            return map_response(status_code, "", elapsed(), truncated=truncated)
        try:
            payload: Any = json.loads(text)
            parsed = True
        except json.JSONDecodeError:
            payload, parsed = text, False
        return map_response(status_code, payload, elapsed(), parsed=parsed, truncated=truncated)
