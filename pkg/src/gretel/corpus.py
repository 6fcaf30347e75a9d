"""Tool corpus and labeled query loading (ToolBench-style JSONL)."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

logger = logging.getLogger(__name__)

PARAM_KINDS = ("string", "integer", "number", "boolean", "array", "object")
PARAM_LOCATIONS = ("query", "path", "body", "header")
HTTP_METHODS = ("GET", "POST")

_SLOT_RE = re.compile(r"\{([^{}]+)\}")


class CorpusError(Exception):
    """Base class for ingestion failures."""


class CorpusParseError(CorpusError):
    def __init__(self, path: str | Path, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class CorpusValidationError(CorpusError):
    def __init__(self, message: str, line: int | None = None) -> None:
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    required: bool
    location: str
    description: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "required": self.required,
            "location": self.location,
            "description": self.description,
        }


@dataclass(frozen=True)
class ApiSpec:
    api_name: str
    description: str
    params: tuple[ParamSpec, ...]
    method: str = "GET"
    endpoint_template: str = ""
    requires_auth: bool = False

    def param(self, name: str) -> ParamSpec | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    @property
    def required_params(self) -> tuple[ParamSpec, ...]:
        return tuple(p for p in self.params if p.required)

    def slots(self) -> list[str]:
        return _SLOT_RE.findall(self.endpoint_template)

    def to_dict(self) -> dict[str, Any]:
        return {
            "api_name": self.api_name,
            "description": self.description,
            "method": self.method,
            "endpoint_template": self.endpoint_template,
            "requires_auth": self.requires_auth,
            "params": [p.to_dict() for p in self.params],
        }


@dataclass(frozen=True)
class ToolSpec:
    tool_id: str
    name: str
    description: str
    apis: tuple[ApiSpec, ...]

    def api(self, api_name: str) -> ApiSpec | None:
        for a in self.apis:
            if a.api_name == api_name:
                return a
        return None

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_id": self.tool_id,
            "name": self.name,
            "description": self.description,
            "apis": [a.to_dict() for a in self.apis],
        }


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str
    relevant: frozenset[tuple[str, str]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "text": self.text,
            "relevant": [{"tool_id": t, "api_name": a} for t, a in sorted(self.relevant)],
        }


@dataclass
class Corpus:
    """Immutable-after-load index of tools keyed by ``tool_id``."""

    tools: dict[str, ToolSpec] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list, compare=False)

    def __len__(self) -> int:
        return len(self.tools)

    def __iter__(self) -> Iterator[ToolSpec]:
        return iter(self.tools.values())

    def __contains__(self, tool_id: object) -> bool:
        return tool_id in self.tools

    def __getitem__(self, tool_id: str) -> ToolSpec:
        return self.tools[tool_id]

    def api(self, tool_id: str, api_name: str) -> ApiSpec:
        tool = self.tools.get(tool_id)
        api = tool.api(api_name) if tool else None
        if api is None:
            raise KeyError(f"{tool_id}/{api_name}")
        return api

    def pairs(self) -> list[tuple[str, str]]:
        """All (tool_id, api_name) pairs in load order."""
        return [(t.tool_id, a.api_name) for t in self.tools.values() for a in t.apis]

    def resolve_tool(self, ref: str) -> ToolSpec | None:
        """Look up a tool by id, falling back to its display name."""
        if ref in self.tools:
            return self.tools[ref]
        for tool in self.tools.values():
            if tool.name == ref:
                return tool
        return None


# -- validation ---------------------------------------------------------------

_TOOL_FIELDS = {"tool_id", "name", "description", "apis"}
_API_FIELDS = {"api_name", "description", "method", "endpoint_template", "requires_auth", "params"}
_PARAM_FIELDS = {"name", "kind", "required", "location", "description"}


def _require(obj: dict, key: str, typ: type | tuple[type, ...], where: str, line: int) -> Any:
    if key not in obj:
        raise CorpusValidationError(f"{where}: missing field '{key}'", line)
    value = obj[key]
    if not isinstance(value, typ):
        raise CorpusValidationError(f"{where}: field '{key}' has wrong type", line)
    return value


def _check_unknown(obj: dict, allowed: set[str], where: str, line: int, strict: bool, warnings: list[str]) -> None:
    extra = sorted(set(obj) - allowed)
    if not extra:
        return
    msg = f"line {line}: {where}: unknown field(s) {', '.join(extra)}"
    if strict:
        raise CorpusValidationError(f"{where}: unknown field(s) {', '.join(extra)}", line)
    warnings.append(msg)
    logger.warning(msg)


def _parse_param(raw: Any, where: str, line: int, strict: bool, warnings: list[str]) -> ParamSpec:
    if not isinstance(raw, dict):
        raise CorpusValidationError(f"{where}: parameter must be an object", line)
    _check_unknown(raw, _PARAM_FIELDS, where, line, strict, warnings)
    name = _require(raw, "name", str, where, line)
    if not name:
        raise CorpusValidationError(f"{where}: empty parameter name", line)
    kind = _require(raw, "kind", str, where, line)
    if kind not in PARAM_KINDS:
        raise CorpusValidationError(f"{where}: parameter '{name}' has unknown kind '{kind}'", line)
    location = raw.get("location", "query")
    if location not in PARAM_LOCATIONS:
        raise CorpusValidationError(f"{where}: parameter '{name}' has unknown location '{location}'", line)
    required = raw.get("required", False)
    if not isinstance(required, bool):
        raise CorpusValidationError(f"{where}: parameter '{name}' field 'required' must be boolean", line)
    if location == "path" and not required:
        raise CorpusValidationError(f"{where}: path parameter '{name}' must be required", line)
    description = raw.get("description", "")
    if not isinstance(description, str):
        raise CorpusValidationError(f"{where}: parameter '{name}' description must be a string", line)
    return ParamSpec(name=name, kind=kind, required=required, location=location, description=description)


def _parse_api(raw: Any, tool_id: str, line: int, strict: bool, warnings: list[str]) -> ApiSpec:
    if not isinstance(raw, dict):
        raise CorpusValidationError(f"tool '{tool_id}': api entry must be an object", line)
    api_name = _require(raw, "api_name", str, f"tool '{tool_id}'", line)
    if not api_name:
        raise CorpusValidationError(f"tool '{tool_id}': empty api_name", line)
    where = f"{tool_id}/{api_name}"
    _check_unknown(raw, _API_FIELDS, where, line, strict, warnings)
    description = _require(raw, "description", str, where, line)
    method = raw.get("method", "GET")
    if method not in HTTP_METHODS:
        raise CorpusValidationError(f"{where}: method must be GET or POST", line)
    endpoint = _require(raw, "endpoint_template", str, where, line)
    requires_auth = raw.get("requires_auth", False)
    if not isinstance(requires_auth, bool):
        raise CorpusValidationError(f"{where}: requires_auth must be boolean", line)
    raw_params = raw.get("params", [])
    if not isinstance(raw_params, list):
        raise CorpusValidationError(f"{where}: params must be a list", line)
    params = tuple(_parse_param(p, where, line, strict, warnings) for p in raw_params)

    names = [p.name for p in params]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise CorpusValidationError(f"{where}: duplicate parameter name(s) {', '.join(dupes)}", line)

    slots = _SLOT_RE.findall(endpoint)
    path_params = {p.name for p in params if p.location == "path"}
    for slot in slots:
        if slot not in path_params:
            raise CorpusValidationError(f"{where}: endpoint slot '{{{slot}}}' has no path parameter", line)
    if len(slots) != len(set(slots)):
        raise CorpusValidationError(f"{where}: endpoint repeats a slot", line)
    for name in sorted(path_params - set(slots)):
        raise CorpusValidationError(f"{where}: path parameter '{name}' has no endpoint slot", line)

    return ApiSpec(
        api_name=api_name,
        description=description,
        params=params,
        method=method,
        endpoint_template=endpoint,
        requires_auth=requires_auth,
    )


def parse_tool(obj: Any, line: int = 0, *, strict: bool = True, warnings: list[str] | None = None) -> ToolSpec:
    """Validate one decoded tools.jsonl object."""
    warnings = warnings if warnings is not None else []
    if not isinstance(obj, dict):
        raise CorpusValidationError("tool record must be a JSON object", line)
    tool_id = _require(obj, "tool_id", str, "tool", line)
    if not tool_id:
        raise CorpusValidationError("tool: empty tool_id", line)
    where = f"tool '{tool_id}'"
    _check_unknown(obj, _TOOL_FIELDS, where, line, strict, warnings)
    name = obj.get("name", tool_id)
    if not isinstance(name, str):
        raise CorpusValidationError(f"{where}: field 'name' has wrong type", line)
    description = _require(obj, "description", str, where, line)
    if not description.strip():
        raise CorpusValidationError(f"{where}: field 'description' is empty", line)
    raw_apis = _require(obj, "apis", list, where, line)
    if not raw_apis:
        raise CorpusValidationError(f"{where}: field 'apis' is empty", line)
    apis = tuple(_parse_api(a, tool_id, line, strict, warnings) for a in raw_apis)
    api_names = [a.api_name for a in apis]
    dupes = sorted({n for n in api_names if api_names.count(n) > 1})
    if dupes:
        raise CorpusValidationError(f"{where}: duplicate api_name(s) {', '.join(dupes)}", line)
    return ToolSpec(tool_id=tool_id, name=name, description=description, apis=apis)


def _iter_jsonl(path: Path) -> Iterator[tuple[int, Any]]:
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                yield lineno, json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(path, lineno, f"malformed JSON ({exc.msg})") from exc


def build_corpus(tools: Iterable[ToolSpec]) -> Corpus:
    corpus = Corpus()
    for tool in tools:
        if tool.tool_id in corpus.tools:
            raise CorpusValidationError(f"duplicate tool_id '{tool.tool_id}'")
        corpus.tools[tool.tool_id] = tool
    return corpus


def load_corpus(path: str | Path, *, strict: bool = True) -> Corpus:
    """Load and validate a tools.jsonl file.

    With ``strict=False`` unknown fields become warnings instead of errors;
    every other invariant is still enforced.
    """
    path = Path(path)
    corpus = Corpus()
    for lineno, obj in _iter_jsonl(path):
        tool = parse_tool(obj, lineno, strict=strict, warnings=corpus.warnings)
        if tool.tool_id in corpus.tools:
            raise CorpusValidationError(f"duplicate tool_id '{tool.tool_id}'", lineno)
        corpus.tools[tool.tool_id] = tool
    if not corpus.tools:
        logger.warning("%s: corpus is empty", path)
    return corpus


def parse_query(obj: Any, corpus: Corpus, line: int = 0) -> QueryRecord:
    if not isinstance(obj, dict):
        raise CorpusValidationError("query record must be a JSON object", line)
    query_id = _require(obj, "query_id", str, "query", line)
    text = _require(obj, "text", str, f"query '{query_id}'", line)
    if not text.strip():
        raise CorpusValidationError(f"query '{query_id}': empty text", line)
    raw_rel = obj.get("relevant", [])
    if not isinstance(raw_rel, list):
        raise CorpusValidationError(f"query '{query_id}': relevant must be a list", line)
    pairs: set[tuple[str, str]] = set()
    unresolved: list[str] = []
    for item in raw_rel:
        if not isinstance(item, dict) or not isinstance(item.get("tool_id"), str):
            raise CorpusValidationError(f"query '{query_id}': malformed relevance label", line)
        tool_id = item["tool_id"]
        tool = corpus.tools.get(tool_id)
        if tool is None:
            unresolved.append(f"({query_id}, {tool_id})")
            continue
        api_name = item.get("api_name")
        if api_name is None:
            # tool-level label: expand to every API of the tool
            pairs.update((tool_id, a.api_name) for a in tool.apis)
        elif tool.api(api_name) is None:
            unresolved.append(f"({query_id}, {tool_id}/{api_name})")
        else:
            pairs.add((tool_id, api_name))
    if unresolved:
        raise CorpusValidationError("unknown relevance target(s): " + ", ".join(unresolved), line)
    return QueryRecord(query_id=query_id, text=text, relevant=frozenset(pairs))


def load_queries(path: str | Path, corpus: Corpus) -> list[QueryRecord]:
    """Load queries.jsonl, resolving every label against ``corpus``; file order is kept."""
    path = Path(path)
    queries: list[QueryRecord] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        record = parse_query(obj, corpus, lineno)
        if record.query_id in seen:
            raise CorpusValidationError(f"duplicate query_id '{record.query_id}'", lineno)
        seen.add(record.query_id)
        queries.append(record)
    if not queries:
        logger.warning("%s: no queries found", path)
    return queries


def dump_corpus(corpus: Corpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for tool in corpus:
            fh.write(json.dumps(tool.to_dict(), sort_keys=False) + "\n")


def dump_queries(queries: Iterable[QueryRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps(q.to_dict()) + "\n")
