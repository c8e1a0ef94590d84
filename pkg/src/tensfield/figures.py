"""Matplotlib rendering for region reports and scenario comparisons.

Figures are written straight to files next to the delimited reports;
nothing is shown interactively. The object-oriented Figure API is used
throughout so concurrent scenario runs can render without sharing any
global state.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure

from .post import RegionReport
from .scenario import ComparisonTable


def _save_atomic(fig: Figure, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format=path.suffix.lstrip(".") or "png", dpi=150,
                bbox_inches="tight")
    os.replace(tmp, path)


def save_region_figure(reports: Sequence[RegionReport], path: str | Path,
                       title: str = "") -> None:
    """Bar chart of max and mean |J| per region for one scenario."""
    regions = [r.region for r in reports]
    max_j = [r.max_j for r in reports]
    mean_j = [r.mean_j for r in reports]
    x = np.arange(len(regions))

    fig = Figure(figsize=(max(4.0, 1.1 * len(regions) + 2.0), 3.2))
    ax = fig.add_subplot(1, 1, 1)
    ax.bar(x - 0.2, max_j, width=0.4, label="max |J|", color="#c44e52")
    ax.bar(x + 0.2, mean_j, width=0.4, label="mean |J|", color="#4c72b0")
    ax.set_xticks(x)
    ax.set_xticklabels(regions, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("current density (A/m$^2$)")
    if title:
        ax.set_title(title)
    if max(max_j, default=0.0) > 0.0:
        ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    _save_atomic(fig, path)


def save_comparison_figure(table: ComparisonTable, path: str | Path) -> None:
    """Grouped bars of max |J| per region across scenarios."""
    n_labels = len(table.labels)
    n_regions = len(table.regions)
    x = np.arange(n_regions)
    width = 0.8 / max(n_labels, 1)

    fig = Figure(figsize=(max(4.0, 1.4 * n_regions + 2.0), 3.4))
    ax = fig.add_subplot(1, 1, 1)
    for i, label in enumerate(table.labels):
        ax.bar(x + (i - (n_labels - 1) / 2.0) * width, table.max_j[i],
               width=width, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(table.regions, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("max |J| (A/m$^2$)")
    if table.max_j.size and table.max_j.max() > 0.0:
        ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    _save_atomic(fig, path)
