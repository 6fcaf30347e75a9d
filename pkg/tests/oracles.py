"""Independent reference implementations used to cross-check the library.

Written without importing the code under test; each computes its quantity
the slow, obvious way.
"""

from __future__ import annotations

import math
from collections import Counter


def ref_tokens(text: str) -> list[str]:
    out, cur = [], []
    for ch in text.lower():
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur))
            cur = []
    if cur:
        out.append("".join(cur))
    return out


def ref_bm25(docs: list[str], query: str, k1: float = 1.2, b: float = 0.75) -> list[float]:
    """Okapi BM25 with the non-negative idf ln(1 + (N - df + 0.5) / (df + 0.5))."""
    toks = [ref_tokens(d) for d in docs]
    n = len(toks)
    avgdl = sum(len(t) for t in toks) / n
    scores = []
    for t in toks:
        tf = Counter(t)
        s = 0.0
        for term in set(ref_tokens(query)):
            df = sum(1 for other in toks if term in other)
            if df == 0 or tf[term] == 0:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf[term] * (k1 + 1) / (tf[term] + k1 * (1 - b + b * len(t) / avgdl))
        scores.append(s)
    return scores


def ref_recall(ranked: list, relevant: set, k: int) -> float:
    hits = 0
    seen = []
    for item in ranked:
        if item in seen:
            continue
        seen.append(item)
        if len(seen) > k:
            break
        if item in relevant:
            hits += 1
    return hits / len(relevant)


def ref_ndcg(ranked: list, relevant: set, k: int) -> float:
    uniq = []
    for item in ranked:
        if item not in uniq:
            uniq.append(item)
    gains = [1.0 if item in relevant else 0.0 for item in uniq[:k]]
    dcg = 0.0
    for rank, g in enumerate(gains, start=1):
        dcg += g / math.log2(rank + 1)
    # ideal: every relevant item (ranked or not) sorted first
    ideal_gains = sorted([1.0] * len(relevant) + [0.0] * k, reverse=True)[:k]
    idcg = 0.0
    for rank, g in enumerate(ideal_gains, start=1):
        idcg += g / math.log2(rank + 1)
    return 0.0 if dcg == 0 else dcg / idcg


def ref_pass(ranked: list, statuses: dict, relevant: set, k: int) -> float:
    uniq = []
    for item in ranked:
        if item not in uniq:
            uniq.append(item)
    for item in uniq[:k]:
        if item in relevant and statuses[item] in ("SUCCESS_REAL", "SUCCESS_SIMULATED"):
            return 1.0
    return 0.0


PRIORITY = ["SUCCESS_REAL", "SUCCESS_SIMULATED", "OTHER_NONERROR", "SIMULATION_FAILED", "PLANNING_FAILED"]


def ref_rerank(items: list[tuple[str, str, float]], statuses: dict) -> list[tuple[str, str]]:
    """Selection sort by (priority, -fused, tool_id, api_name)."""
    pool = list(items)
    out = []
    while pool:
        best = pool[0]
        for cand in pool[1:]:
            a = (PRIORITY.index(statuses[(cand[0], cand[1])]), -cand[2], cand[0], cand[1])
            b = (PRIORITY.index(statuses[(best[0], best[1])]), -best[2], best[0], best[1])
            if a < b:
                best = cand
        pool.remove(best)
        out.append((best[0], best[1]))
    return out

