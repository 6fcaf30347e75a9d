"""Evidence-driven re-ranking: evaluator-LLM mode with a deterministic comparator fallback."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

from .corpus import Corpus
from .evidence import STATUS_PRIORITY, EvidenceTuple, TrialStatus
from .llm import INVALID_JSON, CompletionRequest, Provider, parse_json_payload, render
from .retriever import Candidate, CandidateList

logger = logging.getLogger(__name__)

Key = tuple[str, str]
RANK_SOURCES = ("llm", "deterministic", "llm_fallback")
EXCERPT_CHARS = 240


@dataclass(frozen=True)
class RankedEntry:
    tool_id: str
    api_name: str
    evidence_summary: str
    rank_source: str

    @property
    def key(self) -> Key:
        return (self.tool_id, self.api_name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_id": self.tool_id,
            "api_name": self.api_name,
            "evidence_summary": self.evidence_summary,
            "rank_source": self.rank_source,
        }


@dataclass(frozen=True)
class RankedOutcome:
    query_id: str
    ranked: tuple[RankedEntry, ...]

    def keys(self) -> list[Key]:
        return [e.key for e in self.ranked]

    def to_dict(self) -> dict[str, Any]:
        return {"query_id": self.query_id, "ranked": [e.to_dict() for e in self.ranked]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RankedOutcome":
        return cls(
            query_id=d["query_id"],
            ranked=tuple(RankedEntry(e["tool_id"], e["api_name"], e.get("evidence_summary", ""),
                                     e.get("rank_source", "deterministic")) for e in d["ranked"]),
        )


def _candidates(candidates: CandidateList | Iterable[Candidate]) -> list[Candidate]:
    return list(candidates.ranked if isinstance(candidates, CandidateList) else candidates)


def _query_id(candidates: CandidateList | Iterable[Candidate], query_id: str | None) -> str:
    if query_id is not None:
        return query_id
    return candidates.query_id if isinstance(candidates, CandidateList) else ""


def _check_evidence(cands: list[Candidate], evidence: Mapping[Key, EvidenceTuple]) -> None:
    missing = [f"{c.tool_id}/{c.api_name}" for c in cands if c.key not in evidence]
    if missing:
        raise ValueError("missing evidence for " + ", ".join(missing))


def evidence_summary(ev: EvidenceTuple, with_latency: bool = False) -> str:
    meta = ev.metadata
    parts = [
        f"status={ev.status.value}",
        f"simulation_used={'true' if meta.simulation_used else 'false'}",
    ]
    if with_latency:
        parts.append(f"latency_ms={meta.latency_ms}")
    if meta.http_status is not None:
        parts.append(f"http_status={meta.http_status}")
    if meta.error_class is not None:
        parts.append(f"error_class={meta.error_class}")
    excerpt = ev.result if isinstance(ev.result, str) else json.dumps(ev.result, ensure_ascii=False, default=str)
    if len(excerpt) > EXCERPT_CHARS:
        excerpt = excerpt[:EXCERPT_CHARS] + "..."
    parts.append(f"result={excerpt}")
    return " ".join(parts)


def sort_key(c: Candidate, ev: EvidenceTuple, latency_tiebreak: bool = False) -> tuple:
    """Total order: status priority, [latency within SUCCESS_REAL], fused score desc, key."""
    latency = ev.metadata.latency_ms if latency_tiebreak and ev.status is TrialStatus.SUCCESS_REAL else 0
    return (STATUS_PRIORITY[ev.status], latency, -c.fused_score, c.tool_id, c.api_name)


def rerank_deterministic(
    candidates: CandidateList | Iterable[Candidate],
    evidence: Mapping[Key, EvidenceTuple],
    *,
    latency_tiebreak: bool = False,
    query_id: str | None = None,
    rank_source: str = "deterministic",
) -> RankedOutcome:
    cands = _candidates(candidates)
    _check_evidence(cands, evidence)
    ordered = sorted(cands, key=lambda c: sort_key(c, evidence[c.key], latency_tiebreak))
    return RankedOutcome(
        query_id=_query_id(candidates, query_id),
        ranked=tuple(RankedEntry(c.tool_id, c.api_name, evidence_summary(evidence[c.key]), rank_source)
                     for c in ordered),
    )


def candidates_block(cands: list[Candidate], evidence: Mapping[Key, EvidenceTuple], corpus: Corpus) -> str:
    lines = []
    for i, c in enumerate(cands, start=1):
        tool = corpus.tools.get(c.tool_id)
        name = tool.name if tool else c.tool_id
        pair = json.dumps([name, c.api_name], ensure_ascii=False)
        lines.append(f"{i}. {pair} (tool_id={c.tool_id}) {evidence_summary(evidence[c.key], with_latency=True)}")
    return "\n".join(lines)


def _resolve(item: Any, cands: list[Candidate], corpus: Corpus) -> Key | None:
    if isinstance(item, (list, tuple)) and len(item) == 2:
        tool_ref, api_name = item
    elif isinstance(item, dict):
        tool_ref = item.get("tool_id", item.get("tool", item.get("Tool")))
        api_name = item.get("api_name", item.get("api", item.get("API")))
    elif isinstance(item, str) and "." in item:
        tool_ref, _, api_name = item.rpartition(".")
    else:
        return None
    if not isinstance(tool_ref, str) or not isinstance(api_name, str):
        return None
    for c in cands:
        if c.api_name == api_name and c.tool_id == tool_ref:
            return c.key
    for c in cands:
        tool = corpus.tools.get(c.tool_id)
        if c.api_name == api_name and tool is not None and tool.name == tool_ref:
            return c.key
    return None


def parse_ranking(value: Any, cands: list[Candidate], corpus: Corpus) -> list[Key] | None:
    """Map evaluator output to candidate keys; ``None`` means the output is unusable."""
    if value is INVALID_JSON:
        return None
    if isinstance(value, dict):
        for field in ("ranking", "ranked", "tools"):
            if isinstance(value.get(field), list):
                value = value[field]
                break
    if not isinstance(value, list):
        return None
    keys: list[Key] = []
    for item in value:
        key = _resolve(item, cands, corpus)
        if key is None:
            logger.warning("evaluator named a pair outside the candidate set: %r", item)
            continue
        if key not in keys:
            keys.append(key)
    return keys


def rerank_llm(
    query: str,
    candidates: CandidateList | Iterable[Candidate],
    evidence: Mapping[Key, EvidenceTuple],
    provider: Provider,
    corpus: Corpus,
    *,
    latency_tiebreak: bool = False,
    query_id: str | None = None,
) -> RankedOutcome:
    """Evaluator-ordered ranking. Omitted candidates follow in comparator order
    (``llm_fallback``); unusable output falls back to the comparator entirely."""
    cands = _candidates(candidates)
    _check_evidence(cands, evidence)
    qid = _query_id(candidates, query_id)
    prompt = render("evaluator", {"query": query, "candidates": candidates_block(cands, evidence, corpus)})
    res = provider.complete(CompletionRequest(prompt))
    keys = parse_ranking(parse_json_payload(res.text), cands, corpus) if res.ok else None
    fallback = rerank_deterministic(cands, evidence, latency_tiebreak=latency_tiebreak, query_id=qid)
    if keys is None:
        logger.warning("query %s: evaluator output unusable (%s); using deterministic ranking",
                       qid, res.diagnostic or "unparseable")
        return fallback
    by_key = {c.key: c for c in cands}
    ranked = [RankedEntry(k[0], k[1], evidence_summary(evidence[k]), "llm") for k in keys if k in by_key]
    chosen = set(keys)
    ranked.extend(RankedEntry(e.tool_id, e.api_name, e.evidence_summary, "llm_fallback")
                  for e in fallback.ranked if e.key not in chosen)
    return RankedOutcome(query_id=qid, ranked=tuple(ranked))
