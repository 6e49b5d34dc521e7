"""Figures written next to the delimited reports.

Output is byte-stable for identical inputs: the SVG id salt is fixed and
date metadata is dropped.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import METRIC_NAMES  # noqa: E402

_LABELS = {
    "sensitivity": "Sensitivity",
    "specificity": "Specificity",
    "ppv": "PPV",
    "npv": "NPV",
    "f1": "F1",
    "balanced_accuracy": "Balanced accuracy",
    "mcc": "MCC",
    "jaccard": "Jaccard",
}

RC = {
    "svg.hashsalt": "panelval",
    "svg.fonttype": "path",
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    path = Path(path)
    fmt = path.suffix.lstrip(".").lower() or "svg"
    meta = {"Date": None} if fmt in ("svg", "pdf") else {}
    if fmt == "png":
        meta = {"Software": None}
    fig.savefig(path, format=fmt, metadata=meta, bbox_inches="tight")
    plt.close(fig)


def calibration_figure(curve, path, *, title: str | None = None) -> None:
    """Apparent and bias-corrected calibration curves against the identity line.

    ``curve`` is a sequence of ``(predicted, apparent, bias_corrected)``.
    """
    xs = [c[0] for c in curve]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot([0, 1], [0, 1], ls="--", color="black", lw=1, label="Ideal")
        ax.plot(xs, [c[1] for c in curve], ls=":", color="0.4", lw=1.2, label="Apparent")
        ax.plot(xs, [c[2] for c in curve], color="tab:red", lw=1.6, label="Bias-corrected")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("Predicted probability")
        ax.set_ylabel("Actual probability")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper left", frameon=False)
        _save(fig, path)


def metrics_figure(intervals: dict, path) -> None:
    """Point estimates with percentile intervals, one row per metric."""
    names = [m for m in METRIC_NAMES if intervals.get(m) is not None]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 0.45 * len(names) + 1))
        for i, name in enumerate(reversed(names)):
            iv = intervals[name]
            ax.plot([iv.lower, iv.upper], [i, i], color="black", lw=1.2)
            ax.plot([iv.estimate], [i], "o", color="tab:blue", ms=5)
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels([_LABELS[n] for n in reversed(names)])
        ax.set_xlabel("Estimate (bootstrap percentile interval)")
        ax.axvline(1.0, color="0.8", lw=0.8)
        _save(fig, path)
