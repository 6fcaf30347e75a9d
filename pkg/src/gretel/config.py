"""Run configuration: a TOML file with one table per pipeline module."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    tools: str = "tools.jsonl"
    queries: str = "queries.jsonl"
    scenario: str = ""
    output: str = "out"


@dataclass(frozen=True)
class RetrieverConfig:
    k: int = 10
    k1: float = 1.2
    b: float = 0.75
    alpha: float = 0.0
    embedding_endpoint: str = ""


@dataclass(frozen=True)
class TrialSection:
    timeout_ms: int = 10_000
    max_concurrency: int = 4
    simulation_enabled: bool = True
    cache_planned_calls: bool = True


@dataclass(frozen=True)
class LLMConfig:
    mode: str = "scripted"
    script_path: str = ""
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "GRETEL_LLM_API_KEY"
    timeout_ms: int = 30_000


@dataclass(frozen=True)
class RerankConfig:
    mode: str = "deterministic"
    latency_tiebreak: bool = False


@dataclass(frozen=True)
class EvalConfig:
    k_values: tuple[int, ...] = (5, 10)
    pass_rate: bool = True
    pass_rate_requires_relevance: bool = True
    figures: bool = True


@dataclass(frozen=True)
class SandboxConfig:
    allowlist: tuple[str, ...] = ("127.0.0.1", "localhost")
    response_cap_bytes: int = 64 * 1024
    base_url: str = ""
    timeout_ms: int = 5_000
    mock_host: str = "127.0.0.1"
    mock_port: int = 0


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = PathsConfig()
    retriever: RetrieverConfig = RetrieverConfig()
    trial: TrialSection = TrialSection()
    llm: LLMConfig = LLMConfig()
    rerank: RerankConfig = RerankConfig()
    eval: EvalConfig = EvalConfig()
    sandbox: SandboxConfig = SandboxConfig()
    base_dir: Path = field(default=Path("."), compare=False)

    def path(self, name: str) -> Path | None:
        value = getattr(self.paths, name)
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("output") or self.base_dir / "out"

    def as_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        """Binds artifacts to this config and the exact input file contents."""
        d = self.as_dict()
        d["paths"].pop("output")
        inputs = {}
        for name in ("tools", "queries", "scenario"):
            p = self.path(name)
            if p is not None and p.exists():
                inputs[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        if self.llm.mode == "scripted" and self.llm.script_path:
            p = self._resolve(self.llm.script_path)
            if p.exists():
                inputs["script"] = hashlib.sha256(p.read_bytes()).hexdigest()
        blob = json.dumps({"config": d, "inputs": inputs}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def _resolve(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def script_path(self) -> Path | None:
        return self._resolve(self.llm.script_path) if self.llm.script_path else None


_SECTIONS = {
    "paths": PathsConfig,
    "retriever": RetrieverConfig,
    "trial": TrialSection,
    "llm": LLMConfig,
    "rerank": RerankConfig,
    "eval": EvalConfig,
    "sandbox": SandboxConfig,
}


def _coerce(section: str, name: str, default: Any, value: Any) -> Any:
    where = f"{section}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list")
        return tuple(value)
    return value


def _validate(cfg: RunConfig) -> None:
    ks = cfg.eval.k_values
    if not ks:
        raise ConfigError("eval.k_values must be nonempty")
    if any(isinstance(k, bool) or not isinstance(k, int) or k <= 0 for k in ks):
        raise ConfigError("eval.k_values must hold positive integers")
    if list(ks) != sorted(set(ks)):
        raise ConfigError("k_values must ascend")
    if cfg.llm.mode not in ("scripted", "http"):
        raise ConfigError("llm.mode must be 'scripted' or 'http'")
    if cfg.llm.mode == "http" and not (cfg.llm.endpoint and cfg.llm.model):
        raise ConfigError("llm.mode = 'http' requires llm.endpoint and llm.model")
    if cfg.llm.mode == "scripted" and not cfg.llm.script_path:
        raise ConfigError("llm.mode = 'scripted' requires llm.script_path")
    if cfg.rerank.mode not in ("llm", "deterministic"):
        raise ConfigError("rerank.mode must be 'llm' or 'deterministic'")
    if not 0.0 <= cfg.retriever.alpha <= 1.0:
        raise ConfigError("retriever.alpha must lie in [0, 1]")
    if cfg.retriever.alpha > 0 and not cfg.retriever.embedding_endpoint:
        raise ConfigError("retriever.alpha > 0 requires retriever.embedding_endpoint")
    if cfg.retriever.k <= 0:
        raise ConfigError("retriever.k must be positive")
    if cfg.trial.max_concurrency <= 0 or cfg.trial.timeout_ms <= 0:
        raise ConfigError("trial.max_concurrency and trial.timeout_ms must be positive")
    if cfg.sandbox.response_cap_bytes <= 0:
        raise ConfigError("sandbox.response_cap_bytes must be positive")


def from_mapping(data: Mapping[str, Any], base_dir: Path | str = ".") -> RunConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    kwargs: dict[str, Any] = {}
    for section, cls in _SECTIONS.items():
        raw = data.get(section, {})
        if not isinstance(raw, Mapping):
            raise ConfigError(f"[{section}] must be a table")
        defaults = cls()
        names = {f.name for f in fields(cls)}
        extra = set(raw) - names
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")
        values = {k: _coerce(section, k, getattr(defaults, k), v) for k, v in raw.items()}
        kwargs[section] = replace(defaults, **values)
    cfg = RunConfig(**kwargs, base_dir=Path(base_dir))
    _validate(cfg)
    return cfg


def _parse_override(item: str) -> tuple[str, str, Any]:
    key, sep, raw = item.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot:
        raise ConfigError(f"override {item!r} is not section.key=value")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return section, name, value


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for item in overrides:
        section, name, value = _parse_override(item)
        data.setdefault(section, {})[name] = value
    return from_mapping(data, base_dir=path.parent)
