"""Chart rendering for evaluation and split reports.

Figures are drawn off-screen (no interactive backend) and written as PNG
next to the tabular outputs, so report runs work on headless boxes.
"""

from __future__ import annotations

from pathlib import Path

from matplotlib.figure import Figure

from .labeling import ALL_CLASSES
from .metrics import MetricsReport
from .splitting import SplitResult

_BAR_COLORS = {"precision": "#4878cf", "recall": "#6acc65", "f1": "#d65f5f"}
_SPLIT_COLORS = {"full": "#777777", "train": "#4878cf", "val": "#d65f5f"}


def render_metrics_figure(report: MetricsReport, out_path: str | Path) -> Path:
    """Grouped per-class precision/recall/F1 bars, with CI whiskers on F1."""
    classes = [c for c in ALL_CLASSES if c in report.per_class]
    fig = Figure(figsize=(max(6.0, 1.6 * len(classes)), 4.2))
    ax = fig.subplots()

    width = 0.26
    for offset, field in ((-width, "precision"), (0.0, "recall"), (width, "f1")):
        values = [getattr(report.per_class[c], field) for c in classes]
        xs = [i + offset for i in range(len(classes))]
        yerr = None
        if field == "f1" and report.ci:
            lo = [max(0.0, v - report.ci[f"f1.{c}"][0]) for c, v in zip(classes, values)]
            hi = [max(0.0, report.ci[f"f1.{c}"][1] - v) for c, v in zip(classes, values)]
            yerr = [lo, hi]
        ax.bar(xs, values, width=width, label=field, color=_BAR_COLORS[field],
               yerr=yerr, capsize=3)

    macro_f1 = report.macro["f1"]
    ax.axhline(macro_f1, linestyle="--", linewidth=1, color="#333333",
               label=f"macro F1 = {macro_f1:.4f}")
    ax.set_xticks(range(len(classes)))
    ax.set_xticklabels(classes, rotation=20, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"labeler agreement, n = {report.n}")
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()

    out = Path(out_path)
    fig.savefig(out, dpi=150)
    return out


def render_split_figure(result: SplitResult, out_path: str | Path) -> Path:
    """Per-class positive-rate bars comparing the full set against both sides."""
    classes = [c for c in ALL_CLASSES if c in result.ratio_report]
    fig = Figure(figsize=(max(6.0, 1.6 * len(classes)), 4.2))
    ax = fig.subplots()

    width = 0.26
    for offset, side in ((-width, "full"), (0.0, "train"), (width, "val")):
        values = [getattr(result.ratio_report[c], f"{side}_rate") for c in classes]
        xs = [i + offset for i in range(len(classes))]
        ax.bar(xs, values, width=width, label=side, color=_SPLIT_COLORS[side])

    ax.set_xticks(range(len(classes)))
    ax.set_xticklabels(classes, rotation=20, ha="right")
    ax.set_ylabel("positive rate")
    n_train, n_val = len(result.train_uids), len(result.val_uids)
    ax.set_title(f"class balance across split, train = {n_train}, val = {n_val}")
    ax.legend(loc="upper left", fontsize="small")
    fig.tight_layout()

    out = Path(out_path)
    fig.savefig(out, dpi=150)
    return out
