from __future__ import annotations

from gretel.evalharness import MetricsReport
from gretel.plotting import write_figures

PNG = b"\x89PNG\r\n\x1a\n"


def _report(histogram: dict) -> MetricsReport:
    per_k = {k: {"recall": 0.5, "ndcg": 0.6, "pass_rate": 0.4} for k in (1, 5)}
    return MetricsReport(methods={"base": per_k, "gretel": per_k}, failure_histogram=histogram, query_count=2)


def test_figures_written(tmp_path):
    paths = write_figures(_report({"PARAMETER_MISMATCH": 0.5, "FUNCTIONAL_SUCCESS": 0.5}), tmp_path)
    assert [p.name for p in paths] == ["metrics_at_k.png", "failure_histogram.png"]
    assert all(p.read_bytes()[:8] == PNG for p in paths)


def test_histogram_skipped_without_trials(tmp_path):
    report = _report({})
    report.methods["base"][1]["pass_rate"] = None
    paths = write_figures(report, tmp_path)
    assert [p.name for p in paths] == ["metrics_at_k.png"]
