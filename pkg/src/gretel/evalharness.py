"""Ranking metrics (Recall@K, NDCG@K, Pass Rate@K) and report assembly."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Collection, Iterable, Mapping, Sequence

from .corpus import QueryRecord
from .evidence import PASSING_STATUSES, EvidenceTuple
from .sandbox.classify import FailureClass, classify

Key = tuple[str, str]

RESERVED_REPORT_KEYS = frozenset(
    {"failure_histogram", "query_count", "excluded_queries", "config_digest", "generated_at", "metadata"}
)
PASS_RATE_DEFINITION = {
    True: "query passes iff some top-K candidate is labeled relevant and has status SUCCESS_REAL or SUCCESS_SIMULATED",
    False: "query passes iff some top-K candidate has status SUCCESS_REAL or SUCCESS_SIMULATED",
}


class EvaluationError(ValueError):
    pass


class MissingEvidenceError(EvaluationError):
    pass


def _check_k(k: int) -> None:
    if not isinstance(k, int) or k <= 0:
        raise EvaluationError("k must be a positive integer")


def _top(ranked: Sequence[Key], k: int) -> list[Key]:
    return list(dict.fromkeys(ranked))[:k]


def recall_at_k(ranked: Sequence[Key], relevant: Collection[Key], k: int) -> float:
    _check_k(k)
    if not relevant:
        raise EvaluationError("recall is undefined for an empty relevance set")
    rel = set(relevant)
    return len(rel.intersection(_top(ranked, k))) / len(rel)


def ndcg_at_k(ranked: Sequence[Key], relevant: Collection[Key], k: int) -> float:
    """Binary-gain NDCG with log2(rank + 1) discounts."""
    _check_k(k)
    rel = set(relevant)
    dcg = sum(1.0 / math.log2(i + 2) for i, key in enumerate(_top(ranked, k)) if key in rel)
    if dcg == 0.0:
        return 0.0
    idcg = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(rel))))
    return dcg / idcg


def pass_rate_at_k(
    ranked: Sequence[Key],
    evidence: Mapping[Key, EvidenceTuple],
    relevant: Collection[Key],
    k: int,
    *,
    requires_relevance: bool = True,
) -> float:
    """Per-query pass indicator (1.0 or 0.0); average it over queries for Pass Rate@K."""
    _check_k(k)
    rel = set(relevant)
    top = _top(ranked, k)
    missing = [f"{t}/{a}" for t, a in top if (t, a) not in evidence]
    if missing:
        raise MissingEvidenceError("no evidence for top-k candidate(s): " + ", ".join(missing))
    for key in top:
        if requires_relevance and key not in rel:
            continue
        if evidence[key].status in PASSING_STATUSES:
            return 1.0
    return 0.0


def failure_breakdown(
    evidence: Mapping[str, Mapping[Key, EvidenceTuple]] | Iterable[EvidenceTuple],
    rankings: Mapping[str, Sequence[Key]] | None = None,
    k: int | None = None,
) -> dict[str, float]:
    """Histogram of failure classes over trials, optionally only each query's top-k."""
    if isinstance(evidence, Mapping):
        trials: list[EvidenceTuple] = []
        for qid, per_query in evidence.items():
            if rankings is not None and k is not None:
                keys = [key for key in _top(rankings.get(qid, ()), k) if key in per_query]
                trials.extend(per_query[key] for key in keys)
            else:
                trials.extend(per_query.values())
    else:
        trials = list(evidence)
    if not trials:
        raise EvaluationError("failure breakdown needs at least one completed trial")
    counts = {fc: 0 for fc in FailureClass}
    for ev in trials:
        counts[classify(ev)] += 1
    return {fc.value: counts[fc] / len(trials) for fc in FailureClass}


@dataclass
class MetricsReport:
    methods: dict[str, dict[int, dict[str, float | None]]]
    failure_histogram: dict[str, float]
    query_count: int
    excluded_queries: list[str] = field(default_factory=list)
    config_digest: str = ""
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, generated_at: str | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for method, per_k in self.methods.items():
            out[method] = {str(k): dict(v) for k, v in sorted(per_k.items())}
        out["failure_histogram"] = dict(self.failure_histogram)
        out["query_count"] = self.query_count
        out["excluded_queries"] = list(self.excluded_queries)
        out["config_digest"] = self.config_digest
        out["metadata"] = dict(self.metadata)
        if generated_at is not None:
            out["generated_at"] = generated_at
        return out

    def to_json(self, generated_at: str | None = None) -> str:
        return json.dumps(self.to_dict(generated_at), indent=2) + "\n"

    def rows(self) -> list[dict[str, Any]]:
        return [
            {"method": m, "k": k, **vals}
            for m, per_k in self.methods.items()
            for k, vals in sorted(per_k.items())
        ]

    def write(self, out_dir: str | Path, generated_at: str | None = None) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        json_path, csv_path = out_dir / "report.json", out_dir / "report.csv"
        json_path.write_text(self.to_json(generated_at), encoding="utf-8")
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["method", "k", "recall", "ndcg", "pass_rate"])
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
        return json_path, csv_path

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MetricsReport":
        methods = {
            m: {int(k): dict(v) for k, v in per_k.items()}
            for m, per_k in d.items() if m not in RESERVED_REPORT_KEYS
        }
        return cls(
            methods=methods,
            failure_histogram=dict(d.get("failure_histogram", {})),
            query_count=int(d.get("query_count", 0)),
            excluded_queries=list(d.get("excluded_queries", [])),
            config_digest=d.get("config_digest", ""),
            metadata=dict(d.get("metadata", {})),
        )


def evaluate(
    method_outputs: Mapping[str, Mapping[str, Sequence[Key]]],
    queries: Sequence[QueryRecord],
    k_values: Sequence[int],
    *,
    evidence: Mapping[str, Mapping[Key, EvidenceTuple]] | None = None,
    pass_rate: bool = True,
    pass_rate_requires_relevance: bool = True,
    config_digest: str = "",
) -> MetricsReport:
    """Macro-averaged metrics for every method at every K."""
    if not queries:
        raise EvaluationError("empty query set")
    if not k_values:
        raise EvaluationError("k_values is empty")
    for k in k_values:
        _check_k(k)
    clash = RESERVED_REPORT_KEYS.intersection(method_outputs)
    if clash:
        raise EvaluationError(f"method name(s) collide with report fields: {', '.join(sorted(clash))}")
    if pass_rate and evidence is None:
        raise EvaluationError("evidence required for pass_rate")

    excluded = [q.query_id for q in queries if not q.relevant]
    scored = [q for q in queries if q.relevant]
    if not scored:
        raise EvaluationError("no query has relevance labels")
    for method, outputs in method_outputs.items():
        missing = [q.query_id for q in scored if q.query_id not in outputs]
        if missing:
            raise EvaluationError(f"method {method!r} has no ranking for query id(s): {', '.join(missing)}")
    if pass_rate:
        missing = [q.query_id for q in scored if q.query_id not in evidence]
        if missing:
            raise EvaluationError(f"no evidence for query id(s): {', '.join(missing)}")

    n = len(scored)
    methods: dict[str, dict[int, dict[str, float | None]]] = {}
    for method, outputs in method_outputs.items():
        per_k: dict[int, dict[str, float | None]] = {}
        for k in sorted(set(k_values)):
            recall = sum(recall_at_k(outputs[q.query_id], q.relevant, k) for q in scored) / n
            ndcg = sum(ndcg_at_k(outputs[q.query_id], q.relevant, k) for q in scored) / n
            pr: float | None = None
            if pass_rate:
                pr = sum(
                    pass_rate_at_k(outputs[q.query_id], evidence[q.query_id], q.relevant, k,
                                   requires_relevance=pass_rate_requires_relevance)
                    for q in scored
                ) / n
            per_k[k] = {"recall": recall, "ndcg": ndcg, "pass_rate": pr}
        methods[method] = per_k

    histogram: dict[str, float] = {}
    if evidence is not None:
        scored_evidence = {q.query_id: evidence[q.query_id] for q in scored if q.query_id in evidence}
        if any(scored_evidence.values()):
            histogram = failure_breakdown(scored_evidence)

    return MetricsReport(
        methods=methods,
        failure_histogram=histogram,
        query_count=n,
        excluded_queries=excluded,
        config_digest=config_digest,
        metadata={
            "k_values": sorted(set(k_values)),
            "averaging": "macro over queries",
            "relevance": "binary",
            "pass_rate_definition": PASS_RATE_DEFINITION[pass_rate_requires_relevance] if pass_rate else None,
        },
    )
