"""Matplotlib rendering for report outputs (PNG files next to the tables)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import MetricReport  # noqa: E402
from .sweep import REPORT_SYSTEMS, SweepReport  # noqa: E402

_METRIC_LABELS = {"average_precision": "Average precision",
                  "spearman_rho": "Spearman's rho",
                  "p_at_10": "P@10", "p_at_n": "P@N"}

_SYSTEM_STYLE = {
    "textual-baseline": dict(color="tab:orange", marker="s"),
    "visual-baseline": dict(color="tab:gray", marker=None, linestyle="--"),
    "mtl-textSup": dict(color="tab:green", marker="^"),
    "mtl-visSup": dict(color="tab:blue", marker="v"),
    "mtl-ensemble": dict(color="tab:red", marker="o"),
}


def render_sweep_curve(report: SweepReport, metric: str, path) -> None:
    """Mean curve per system over the supervision fraction, std shaded."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for system in REPORT_SYSTEMS:
        by_fraction = report.curves.get(metric, {}).get(system)
        if not by_fraction:
            continue
        fractions = sorted(by_fraction)
        means = [by_fraction[f]["mean"] for f in fractions]
        stds = [by_fraction[f]["std"] for f in fractions]
        style = _SYSTEM_STYLE.get(system, {})
        ax.plot(fractions, means, label=system, **style)
        ax.fill_between(fractions,
                        [m - s for m, s in zip(means, stds)],
                        [m + s for m, s in zip(means, stds)],
                        alpha=0.15, color=style.get("color"))
    ax.set_xscale("log")
    ax.set_xlabel("fraction of transcripts available")
    ax.set_ylabel(_METRIC_LABELS.get(metric, metric))
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep_figures(report: SweepReport, out_dir) -> list[str]:
    paths = []
    for metric, name in (("average_precision", "sweep_ap.png"),
                         ("spearman_rho", "sweep_rho.png")):
        path = os.path.join(out_dir, name)
        render_sweep_curve(report, metric, path)
        paths.append(path)
    return paths


def render_metric_report(report: MetricReport, path) -> None:
    """Per-query average precision bars with the aggregate drawn across."""
    queries = [qm.query for qm in report.per_query]
    values = [qm.average_precision if qm.average_precision is not None else 0.0
              for qm in report.per_query]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * len(queries)), 3.6))
    ax.bar(range(len(queries)), values, color="tab:blue", alpha=0.8)
    agg = report.aggregates.get("average_precision")
    if agg == agg:  # skip NaN
        ax.axhline(agg, color="tab:red", linestyle="--", linewidth=1,
                   label=f"mean AP {agg:.3f}")
        ax.legend(fontsize=8)
    ax.set_xticks(range(len(queries)))
    ax.set_xticklabels(queries, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("average precision")
    ax.set_title(f"head: {report.head}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_training_curves(records: list[dict], path) -> None:
    """Loss per step and dev F1 per eval from a training log."""
    steps = [r["step"] for r in records if r["kind"] == "step"]
    losses = [r["loss"] for r in records if r["kind"] == "step"]
    eval_steps = [r["step"] for r in records if r["kind"] == "eval"]
    f1s = [r["f1"] for r in records if r["kind"] == "eval"]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(steps, losses, color="tab:blue", alpha=0.7, label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if eval_steps:
        ax2 = ax.twinx()
        ax2.plot(eval_steps, f1s, color="tab:red", marker="o", label="dev F1")
        ax2.set_ylabel("dev F1")
        ax2.set_ylim(0, 1)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
