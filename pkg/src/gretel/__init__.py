"""Execution-grounded tool retrieval.

BM25 retrieval proposes candidate tools; each candidate is validated by a
sandboxed trial (plan a call with an LLM, execute it, simulate on error) and
the candidates are re-ranked by the resulting evidence.
"""

from .corpus import ApiSpec, Corpus, ParamSpec, QueryRecord, ToolSpec, load_corpus, load_queries
from .evalharness import MetricsReport, evaluate, failure_breakdown, ndcg_at_k, pass_rate_at_k, recall_at_k
from .evidence import EvidenceTuple, PlannedCall, TrialStatus
from .llm import INVALID_JSON, HTTPProvider, ScriptedProvider, parse_json_payload, render
from .rerank import RankedOutcome, rerank_deterministic, rerank_llm
from .retriever import Candidate, CandidateList, Retriever, build_index, fuse, retrieve
from .sandbox import ExecutionResult, Executor, FailureClass, classify, serve_mock
from .trial import TrialConfig, TrialRunner

__version__ = "0.1.0"

__all__ = [
    "ApiSpec",
    "Candidate",
    "CandidateList",
    "Corpus",
    "EvidenceTuple",
    "ExecutionResult",
    "Executor",
    "FailureClass",
    "HTTPProvider",
    "INVALID_JSON",
    "MetricsReport",
    "ParamSpec",
    "PlannedCall",
    "QueryRecord",
    "RankedOutcome",
    "Retriever",
    "ScriptedProvider",
    "ToolSpec",
    "TrialConfig",
    "TrialRunner",
    "TrialStatus",
    "build_index",
    "classify",
    "evaluate",
    "failure_breakdown",
    "fuse",
    "load_corpus",
    "load_queries",
    "ndcg_at_k",
    "parse_json_payload",
    "pass_rate_at_k",
    "recall_at_k",
    "render",
    "rerank_deterministic",
    "rerank_llm",
    "retrieve",
    "serve_mock",
]
