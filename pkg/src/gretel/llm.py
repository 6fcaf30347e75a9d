"""Prompt templates and language-model providers.

Two providers share the :class:`Provider` protocol: :class:`ScriptedProvider`
answers from a fixed table and is what tests and offline runs use;
:class:`HTTPProvider` talks to a chat-completion endpoint. Neither raises on
failure: problems come back as ``finish_reason="provider_error"``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol

import httpx

logger = logging.getLogger(__name__)

ROLES = ("planner", "simulator", "evaluator")

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class PromptError(ValueError):
    pass


class Signal(enum.Enum):
    INVALID_JSON = "INVALID_JSON"

    def __bool__(self) -> bool:
        return False


INVALID_JSON = Signal.INVALID_JSON


@dataclass(frozen=True)
class PromptTemplate:
    role: str
    template: str
    version: str = "1"

    @property
    def placeholders(self) -> list[str]:
        return list(dict.fromkeys(_PLACEHOLDER_RE.findall(self.template)))

    def render(self, bindings: Mapping[str, str]) -> str:
        missing = [p for p in self.placeholders if p not in bindings]
        if missing:
            raise PromptError(f"unbound placeholder {missing[0]}")
        # single pass: substituted text is never rescanned
        return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), self.template)


def parse_template(text: str) -> PromptTemplate:
    header, sep, body = text.partition("\n---\n")
    if not sep:
        raise PromptError("template file lacks a '---' header separator")
    meta = {}
    for line in header.splitlines():
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    role = meta.get("role", "")
    if role not in ROLES:
        raise PromptError(f"unknown template role {role!r}")
    return PromptTemplate(role=role, template=body.rstrip("\n") + "\n", version=meta.get("version", "1"))


@lru_cache(maxsize=None)
def load_template(role: str) -> PromptTemplate:
    if role not in ROLES:
        raise PromptError(f"unknown template role {role!r}")
    text = resources.files("gretel.prompts").joinpath(f"{role}.txt").read_text(encoding="utf-8")
    return parse_template(text)


def render(role: str, bindings: Mapping[str, str]) -> str:
    return load_template(role).render(bindings)


# -- JSON extraction -----------------------------------------------------------

_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


def parse_json_payload(text: str | None) -> Any:
    """Pull a JSON value out of model output.

    Tries the whole text, then fenced blocks, then the first object or array
    embedded in surrounding prose. Returns ``INVALID_JSON`` when nothing parses.
    """
    if not text:
        return INVALID_JSON
    stripped = text.strip()
    try:
        return json.loads(stripped)
    except json.JSONDecodeError:
        pass
    for block in _FENCE_RE.findall(stripped):
        try:
            return json.loads(block.strip())
        except json.JSONDecodeError:
            continue
    decoder = json.JSONDecoder()
    for i, ch in enumerate(stripped):
        if ch in "{[":
            try:
                value, _ = decoder.raw_decode(stripped, i)
                return value
            except json.JSONDecodeError:
                continue
    return INVALID_JSON


# -- providers -----------------------------------------------------------------

@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: str = "complete"  # complete | truncated | provider_error
    diagnostic: str | None = None
    status_code: int | None = None

    @property
    def ok(self) -> bool:
        return self.finish_reason != "provider_error"


def provider_error(diagnostic: str, status_code: int | None = None) -> CompletionResult:
    return CompletionResult(text="", finish_reason="provider_error", diagnostic=diagnostic, status_code=status_code)


class Provider(Protocol):
    def complete(self, req: CompletionRequest) -> CompletionResult: ...


def prompt_digest(prompt: str) -> str:
    """sha256 of the prompt with whitespace runs collapsed."""
    normalized = " ".join(prompt.split())
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ScriptEntry:
    response: str
    digest: str | None = None
    contains: tuple[str, ...] = ()
    finish_reason: str = "complete"

    def matches(self, prompt: str) -> bool:
        return bool(self.contains) and all(s in prompt for s in self.contains)


def _entry_from_obj(obj: Mapping[str, Any]) -> ScriptEntry:
    response = obj.get("response")
    if response is None:
        raise PromptError("script entry lacks 'response'")
    if not isinstance(response, str):
        response = json.dumps(response)
    contains = obj.get("contains", ())
    if isinstance(contains, str):
        contains = (contains,)
    digest = obj.get("digest")
    if digest is None and not contains:
        raise PromptError("script entry needs 'digest' or 'contains'")
    return ScriptEntry(
        response=response,
        digest=digest,
        contains=tuple(contains),
        finish_reason=obj.get("finish_reason", "complete"),
    )


@dataclass(frozen=True)
class ScriptedProvider:
    """Deterministic provider: exact digest match first, then the first
    ``contains`` entry whose substrings all occur in the prompt."""

    entries: tuple[ScriptEntry, ...] = ()
    _by_digest: dict[str, ScriptEntry] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for e in self.entries:
            if e.digest is not None:
                self._by_digest.setdefault(e.digest, e)

    @classmethod
    def from_entries(cls, entries: Iterable[Mapping[str, Any]]) -> "ScriptedProvider":
        return cls(entries=tuple(_entry_from_obj(e) for e in entries))

    @classmethod
    def from_prompts(cls, table: Mapping[str, Any]) -> "ScriptedProvider":
        """Build from a literal ``{rendered prompt: response}`` table."""
        return cls.from_entries({"digest": prompt_digest(p), "response": r} for p, r in table.items())

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = data["entries"] if isinstance(data, dict) else data
        return cls.from_entries(entries)

    def lookup(self, prompt: str) -> ScriptEntry | None:
        hit = self._by_digest.get(prompt_digest(prompt))
        if hit is not None:
            return hit
        for e in self.entries:
            if e.matches(prompt):
                return e
        return None

    def complete(self, req: CompletionRequest) -> CompletionResult:
        entry = self.lookup(req.prompt)
        if entry is None:
            return provider_error("unscripted prompt")
        return CompletionResult(text=entry.response, finish_reason=entry.finish_reason)


class HTTPProvider:
    """Chat-completion client (``messages`` in, ``choices`` out)."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key_env: str = "GRETEL_LLM_API_KEY",
        timeout: float = 30.0,
        max_in_flight: int = 4,
        client: httpx.Client | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, req: CompletionRequest) -> CompletionResult:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        with self._slots:
            try:
                resp = self._client.post(self.endpoint, json=body, headers=self._headers())
            except httpx.TimeoutException as exc:
                return provider_error(f"timeout: {exc}")
            except httpx.HTTPError as exc:
                return provider_error(f"transport error: {exc}")
        if not resp.is_success:
            return provider_error(f"HTTP {resp.status_code}: {resp.text[:200]}", status_code=resp.status_code)
        try:
            choice = resp.json()["choices"][0]
            text = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError):
            return provider_error("malformed chat-completion response", status_code=resp.status_code)
        finish = "truncated" if choice.get("finish_reason") == "length" else "complete"
        return CompletionResult(text=text, finish_reason=finish, status_code=resp.status_code)

    def close(self) -> None:
        self._client.close()
