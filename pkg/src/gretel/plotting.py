"""Report figures. Uses the non-interactive Agg backend; files only, never a window."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evalharness import MetricsReport  # noqa: E402

METRICS = (("recall", "Recall@K"), ("ndcg", "NDCG@K"), ("pass_rate", "Pass Rate@K"))

STYLE = {
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "font.size": 10,
    "legend.fontsize": 9,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "lines.linewidth": 1.8,
}


def plot_metrics(report: MetricsReport, path: str | Path) -> Path:
    """One panel per metric, one line per method, K on the x axis."""
    fig, axes = plt.subplots(1, len(METRICS), figsize=(11, 3.4), sharey=True)
    for ax, (name, title) in zip(axes, METRICS):
        for method, per_k in report.methods.items():
            ks = sorted(per_k)
            ys = [per_k[k][name] for k in ks]
            if any(y is None for y in ys):
                continue
            ax.plot(ks, ys, marker="o", label=method)
        ax.set_title(title)
        ax.set_xlabel("K")
        ax.set_ylim(0.0, 1.05)
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("score")
    handles, labels = axes[0].get_legend_handles_labels()
    if handles:
        axes[-1].legend(handles, labels, loc="lower right")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_failure_histogram(report: MetricsReport, path: str | Path) -> Path | None:
    if not report.failure_histogram:
        return None
    labels = list(report.failure_histogram)
    values = [report.failure_histogram[l] * 100 for l in labels]
    fig, ax = plt.subplots(figsize=(6, 3.4))
    bars = ax.bar(range(len(labels)), values, color=["#b3541e", "#d9a441", "#5b7db1", "#4c9a5f"][: len(labels)])
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels([l.replace("_", " ").title() for l in labels], rotation=15)
    ax.set_ylabel("% of trials")
    ax.set_ylim(0, max(values + [1.0]) * 1.2)
    for bar, v in zip(bars, values):
        ax.annotate(f"{v:.0f}%", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=9)
    ax.set_title("Trial outcomes by failure class")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_figures(report: MetricsReport, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    with plt.rc_context(STYLE):
        written = [plot_metrics(report, out_dir / "metrics_at_k.png")]
        hist = plot_failure_histogram(report, out_dir / "failure_histogram.png")
    if hist is not None:
        written.append(hist)
    return written
