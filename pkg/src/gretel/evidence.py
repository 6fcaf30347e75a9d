"""Trial evidence records shared by the trial runner, sandbox classifier and re-ranker."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Mapping


class TrialStatus(str, enum.Enum):
    PLANNING_FAILED = "PLANNING_FAILED"
    SUCCESS_REAL = "SUCCESS_REAL"
    SUCCESS_SIMULATED = "SUCCESS_SIMULATED"
    SIMULATION_FAILED = "SIMULATION_FAILED"
    OTHER_NONERROR = "OTHER_NONERROR"

    def __str__(self) -> str:
        return self.value


# best first; the deterministic re-ranker sorts on this
STATUS_PRIORITY: dict[TrialStatus, int] = {
    TrialStatus.SUCCESS_REAL: 0,
    TrialStatus.SUCCESS_SIMULATED: 1,
    TrialStatus.OTHER_NONERROR: 2,
    TrialStatus.SIMULATION_FAILED: 3,
    TrialStatus.PLANNING_FAILED: 4,
}

PASSING_STATUSES = frozenset({TrialStatus.SUCCESS_REAL, TrialStatus.SUCCESS_SIMULATED})


def canonical_value(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def format_call(tool_name: str, api_name: str, bindings: Mapping[str, Any]) -> str:
    """Canonical ``tool.api(name=value,...)`` string with sorted argument names."""
    args = ",".join(f"{k}={canonical_value(bindings[k])}" for k in sorted(bindings))
    return f"{tool_name}.{api_name}({args})"


@dataclass(frozen=True)
class PlannedCall:
    tool_id: str
    api_name: str
    bindings: dict[str, Any]
    formatted: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_id": self.tool_id,
            "api_name": self.api_name,
            "bindings": self.bindings,
            "formatted": self.formatted,
        }


@dataclass(frozen=True)
class StageRecord:
    """One transcript entry. Timing fields are excluded from equality."""

    stage: str  # plan | execute | simulate
    outcome: str
    detail: str = ""
    started_ms: float = field(default=0.0, compare=False)
    ended_ms: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "outcome": self.outcome,
            "detail": self.detail,
            "started_ms": round(self.started_ms, 3),
            "ended_ms": round(self.ended_ms, 3),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StageRecord":
        return cls(
            stage=d["stage"],
            outcome=d["outcome"],
            detail=d.get("detail", ""),
            started_ms=float(d.get("started_ms", 0.0)),
            ended_ms=float(d.get("ended_ms", 0.0)),
        )


@dataclass(frozen=True)
class TrialMetadata:
    simulation_used: bool = False
    latency_ms: int = field(default=0, compare=False)
    http_status: int | None = None
    error_class: str | None = None
    tag: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"simulation_used": self.simulation_used, "latency_ms": self.latency_ms}
        if self.http_status is not None:
            out["http_status"] = self.http_status
        if self.error_class is not None:
            out["error_class"] = self.error_class
        if self.tag is not None:
            out["tag"] = self.tag
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrialMetadata":
        return cls(
            simulation_used=bool(d.get("simulation_used", False)),
            latency_ms=int(d.get("latency_ms", 0)),
            http_status=d.get("http_status"),
            error_class=d.get("error_class"),
            tag=d.get("tag"),
        )


@dataclass(frozen=True)
class EvidenceTuple:
    """Outcome of one trial: ``(status, result, metadata)`` plus a stage transcript.

    Equality ignores wall-clock timing so that repeated or concurrent runs of
    the same scripted trial compare equal.
    """

    status: TrialStatus
    result: Any
    metadata: TrialMetadata
    transcript: tuple[StageRecord, ...] = ()
    call: str | None = None

    @property
    def stages(self) -> list[str]:
        return [s.stage for s in self.transcript]

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "result": self.result,
            "metadata": self.metadata.to_dict(),
            "call": self.call,
            "transcript": [s.to_dict() for s in self.transcript],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvidenceTuple":
        return cls(
            status=TrialStatus(d["status"]),
            result=d.get("result"),
            metadata=TrialMetadata.from_dict(d.get("metadata", {})),
            transcript=tuple(StageRecord.from_dict(s) for s in d.get("transcript", ())),
            call=d.get("call"),
        )
