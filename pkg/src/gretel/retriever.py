"""Sparse BM25 retrieval over (tool, api) documents with optional dense fusion."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import httpx

from .corpus import Corpus

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

_TOKEN_RE = re.compile(r"[^\W_]+")


class RetrievalError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


Key = tuple[str, str]


@dataclass(frozen=True)
class Candidate:
    tool_id: str
    api_name: str
    sparse_score: float
    dense_score: float | None = None
    fused_score: float = 0.0

    @property
    def key(self) -> Key:
        return (self.tool_id, self.api_name)

    def to_dict(self) -> dict:
        return {
            "tool_id": self.tool_id,
            "api_name": self.api_name,
            "sparse_score": self.sparse_score,
            "dense_score": self.dense_score,
            "fused_score": self.fused_score,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Candidate":
        return cls(
            tool_id=d["tool_id"],
            api_name=d["api_name"],
            sparse_score=float(d["sparse_score"]),
            dense_score=None if d.get("dense_score") is None else float(d["dense_score"]),
            fused_score=float(d["fused_score"]),
        )


def _rank_key(c: Candidate) -> tuple:
    return (-c.fused_score, c.tool_id, c.api_name)


@dataclass(frozen=True)
class CandidateList:
    query_id: str
    ranked: tuple[Candidate, ...]
    k: int

    def __post_init__(self) -> None:
        keys = [c.key for c in self.ranked]
        if len(keys) != len(set(keys)):
            raise RetrievalError(f"duplicate candidates for query {self.query_id}")

    def __len__(self) -> int:
        return len(self.ranked)

    def __iter__(self):
        return iter(self.ranked)

    def keys(self) -> list[Key]:
        return [c.key for c in self.ranked]

    def by_key(self) -> dict[Key, Candidate]:
        return {c.key: c for c in self.ranked}


def minmax(values: Sequence[float]) -> list[float]:
    """Per-query min-max normalization; a constant list maps to all ones."""
    if not values:
        return []
    lo, hi = min(values), max(values)
    if hi == lo:
        return [1.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def fuse(sparse: CandidateList, dense: Mapping[Key, float], alpha: float) -> CandidateList:
    """Convex combination of normalized sparse and dense scores, re-sorted.

    Candidates without a dense score keep their normalized sparse score.
    """
    if not 0.0 <= alpha <= 1.0:
        raise RetrievalError(f"alpha must lie in [0, 1], got {alpha}")
    for key, score in dense.items():
        if not (0.0 <= score <= 1.0) or math.isnan(score):
            raise RetrievalError(f"dense score for {key[0]}/{key[1]} outside [0, 1]: {score}")

    cands = list(sparse.ranked)
    sparse_norm = minmax([c.sparse_score for c in cands])
    present = [c.key for c in cands if c.key in dense]
    dense_norm = dict(zip(present, minmax([dense[k] for k in present])))

    fused: list[Candidate] = []
    for c, s_norm in zip(cands, sparse_norm):
        if c.key in dense_norm:
            score = alpha * dense_norm[c.key] + (1.0 - alpha) * s_norm
            fused.append(replace(c, dense_score=dense[c.key], fused_score=score))
        else:
            fused.append(replace(c, dense_score=None, fused_score=s_norm))
    fused.sort(key=_rank_key)
    return CandidateList(query_id=sparse.query_id, ranked=tuple(fused), k=sparse.k)


@dataclass
class BM25Index:
    """Inverted index over one document per (tool, api) pair."""

    keys: list[Key]
    doc_lengths: list[int]
    postings: dict[str, dict[int, int]]
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    texts: list[str] = field(default_factory=list, repr=False)

    @property
    def n_docs(self) -> int:
        return len(self.keys)

    @property
    def avgdl(self) -> float:
        return sum(self.doc_lengths) / self.n_docs

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        # Lucene-style idf; never negative
        df = self.df(term)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def scores(self, query: str) -> dict[int, float]:
        terms = tokenize(query)
        if not terms:
            raise RetrievalError("empty query")
        avgdl = self.avgdl
        out: dict[int, float] = {}
        for term in terms:
            posting = self.postings.get(term)
            if not posting:
                continue
            idf = self.idf(term)
            for doc, tf in posting.items():
                norm = self.k1 * (1.0 - self.b + self.b * self.doc_lengths[doc] / avgdl)
                out[doc] = out.get(doc, 0.0) + idf * tf * (self.k1 + 1.0) / (tf + norm)
        return out


def document_text(corpus: Corpus, tool_id: str, api_name: str) -> str:
    tool = corpus[tool_id]
    api = tool.api(api_name)
    return f"{tool.name} {tool.description} {api.description if api else ''}"


def build_index(corpus: Corpus, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> BM25Index:
    if len(corpus) == 0:
        raise RetrievalError("cannot index an empty corpus")
    keys: list[Key] = []
    lengths: list[int] = []
    texts: list[str] = []
    postings: dict[str, dict[int, int]] = {}
    for doc_id, (tool_id, api_name) in enumerate(corpus.pairs()):
        text = document_text(corpus, tool_id, api_name)
        tokens = tokenize(text)
        keys.append((tool_id, api_name))
        lengths.append(len(tokens))
        texts.append(text)
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, {})[doc_id] = tf
    return BM25Index(keys=keys, doc_lengths=lengths, postings=postings, k1=k1, b=b, texts=texts)


class EmbeddingClient:
    """Client for an embedding endpoint: POST ``{"texts": [...]}`` -> ``{"vectors": [...]}``."""

    def __init__(self, url: str, timeout: float = 10.0, client: httpx.Client | None = None) -> None:
        self.url = url
        self._client = client or httpx.Client(timeout=timeout)
        self._cache: dict[str, list[float]] = {}

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        missing = [t for t in dict.fromkeys(texts) if t not in self._cache]
        if missing:
            resp = self._client.post(self.url, json={"texts": missing})
            resp.raise_for_status()
            vectors = resp.json().get("vectors")
            if not isinstance(vectors, list) or len(vectors) != len(missing):
                raise RetrievalError("embedding endpoint returned a malformed vector list")
            self._cache.update(zip(missing, vectors))
        return [self._cache[t] for t in texts]


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0 or nv == 0:
        return 0.0
    return dot / (nu * nv)


class Retriever:
    """BM25 retriever; dense fusion kicks in when an embedder is given and alpha > 0."""

    def __init__(
        self,
        index: BM25Index,
        alpha: float = 0.0,
        embedder: EmbeddingClient | None = None,
    ) -> None:
        if not 0.0 <= alpha <= 1.0:
            raise RetrievalError(f"alpha must lie in [0, 1], got {alpha}")
        self.index = index
        self.alpha = alpha
        self.embedder = embedder

    def _pool(self, query_id: str, query: str) -> CandidateList:
        scores = self.index.scores(query)
        docs = [d for d, s in scores.items() if s > 0.0]
        cands = [
            Candidate(tool_id=self.index.keys[d][0], api_name=self.index.keys[d][1], sparse_score=scores[d])
            for d in docs
        ]
        normed = minmax([c.sparse_score for c in cands])
        cands = [replace(c, fused_score=n) for c, n in zip(cands, normed)]
        cands.sort(key=_rank_key)
        return CandidateList(query_id=query_id, ranked=tuple(cands), k=len(cands))

    def dense_scores(self, query: str, pool: CandidateList) -> dict[Key, float]:
        if self.embedder is None or not len(pool):
            return {}
        doc_index = {k: i for i, k in enumerate(self.index.keys)}
        texts = [self.index.texts[doc_index[c.key]] for c in pool]
        vectors = self.embedder.embed([query, *texts])
        qv = vectors[0]
        return {c.key: max(0.0, min(1.0, cosine(qv, dv))) for c, dv in zip(pool, vectors[1:])}

    def retrieve(self, query: str, k: int, query_id: str = "") -> CandidateList:
        if not isinstance(k, int) or k <= 0:
            raise RetrievalError("k must be a positive integer")
        pool = self._pool(query_id, query)
        if self.embedder is not None and self.alpha > 0.0:
            pool = fuse(pool, self.dense_scores(query, pool), self.alpha)
        return CandidateList(query_id=query_id, ranked=pool.ranked[:k], k=k)


def retrieve(index: BM25Index, query: str, k: int, query_id: str = "") -> CandidateList:
    """Sparse-only top-k retrieval; zero-score documents are never returned."""
    return Retriever(index).retrieve(query, k, query_id=query_id)
