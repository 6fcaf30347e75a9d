"""Sandboxed execution, the embedded mock tool server and the failure taxonomy."""

from .classify import FailureClass, classify, histogram
from .executor import (
    DEFAULT_RESPONSE_CAP,
    ExecutionResult,
    Executor,
    HostNotAllowedError,
    SandboxError,
    allowlist_from_env,
    map_response,
    token_env_var,
)
from .mock import Behavior, MockScenario, MockServer, MockServerError, ScenarioError, load_scenario, parse_scenario, serve_mock

__all__ = [
    "Behavior",
    "DEFAULT_RESPONSE_CAP",
    "ExecutionResult",
    "Executor",
    "FailureClass",
    "HostNotAllowedError",
    "MockScenario",
    "MockServer",
    "MockServerError",
    "SandboxError",
    "ScenarioError",
    "allowlist_from_env",
    "classify",
    "histogram",
    "load_scenario",
    "map_response",
    "parse_scenario",
    "serve_mock",
    "token_env_var",
]
