"""Figures for the report stage.

Rendering uses the Agg backend with a fixed style and no version
metadata, so the same histogram data always produces the same PNG bytes.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 8,
    "axes.titlesize": 9,
    "axes.labelsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "path.simplify": False,
    "svg.hashsalt": "occmatch",
}


def grid_shape(n: int, max_cols: int = 5) -> Tuple[int, int]:
    cols = min(max(n, 1), max_cols)
    return math.ceil(max(n, 1) / cols), cols


def plot_score_distribution(
    histograms: Sequence[Tuple[str, Mapping[float, int]]],
    path: Path | str,
    bin_width: float = 0.01,
    threshold: float | None = None,
) -> Path:
    """Small-multiple bar charts of matched-title counts per similarity-score bin.

    Args:
        histograms: (panel title, {bin lower bound: count}) per driver, in display order.
        path: output file; the suffix picks the format (png recommended).
        bin_width: width of each bar.
        threshold: drawn as a dashed vertical line when given.
    """
    path = Path(path)
    rows, cols = grid_shape(len(histograms))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.0 * rows), squeeze=False, sharex=True)
        lo = min((min(h) for _, h in histograms if h), default=0.7)
        hi = max((max(h) for _, h in histograms if h), default=0.9) + bin_width
        if threshold is not None:
            lo = min(lo, threshold)
        for ax, (title, hist) in zip(axes.flat, histograms):
            if hist:
                xs = sorted(hist)
                ax.bar(xs, [hist[x] for x in xs], width=bin_width, align="edge", color="#4C72B0", edgecolor="white",
                       linewidth=0.4)
            else:
                ax.text(0.5, 0.5, "no results", ha="center", va="center", transform=ax.transAxes, color="0.4")
            if threshold is not None:
                ax.axvline(threshold, color="0.3", linestyle="--", linewidth=0.8)
            ax.set_title(title)
            ax.set_xlim(lo - bin_width, hi + bin_width)
        for ax in list(axes.flat)[len(histograms):]:
            ax.set_visible(False)
        for ax in axes[-1]:
            ax.set_xlabel("similarity score")
        for ax in axes[:, 0]:
            ax.set_ylabel("job titles")
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, metadata={"Software": None} if path.suffix.lower() == ".png" else None)
        plt.close(fig)
    return path
