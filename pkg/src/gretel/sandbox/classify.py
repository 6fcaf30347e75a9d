"""Failure taxonomy over completed trials."""

from __future__ import annotations

import enum
from collections import Counter
from typing import Iterable

from ..evidence import EvidenceTuple, TrialStatus


class FailureClass(str, enum.Enum):
    PARAMETER_MISMATCH = "PARAMETER_MISMATCH"
    SEMANTIC_MISMATCH = "SEMANTIC_MISMATCH"
    EXECUTION_FAILURE = "EXECUTION_FAILURE"
    FUNCTIONAL_SUCCESS = "FUNCTIONAL_SUCCESS"

    def __str__(self) -> str:
        return self.value


_BY_STATUS = {
    TrialStatus.PLANNING_FAILED: FailureClass.PARAMETER_MISMATCH,
    TrialStatus.OTHER_NONERROR: FailureClass.SEMANTIC_MISMATCH,
    # simulated successes still count as failures here: the real call failed
    TrialStatus.SUCCESS_SIMULATED: FailureClass.EXECUTION_FAILURE,
    TrialStatus.SIMULATION_FAILED: FailureClass.EXECUTION_FAILURE,
    TrialStatus.SUCCESS_REAL: FailureClass.FUNCTIONAL_SUCCESS,
}


def classify(evidence: EvidenceTuple) -> FailureClass:
    return _BY_STATUS[TrialStatus(evidence.status)]


def histogram(evidence: Iterable[EvidenceTuple]) -> dict[FailureClass, float]:
    """Fraction of trials per class; every class is present in the result."""
    counts = Counter(classify(e) for e in evidence)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no completed trials to classify")
    return {fc: counts.get(fc, 0) / total for fc in FailureClass}
