"""Figure rendering for report output. File-only: the Agg backend is forced
so reports render identically on headless machines."""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .costlab import CostModel, CurvePoint, cost_frontier  # noqa: E402


def _save(fig, path: str) -> None:
    tmp = path + ".tmp"
    fig.savefig(tmp, format="png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, path)


def render_curves(path: str, curves: dict[str, list[CurvePoint]],
                  norm_label: str) -> None:
    """Median distance vs flagged budget, one line per attack, quartile band."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for attack in sorted(curves):
        points = curves[attack]
        xs = [max(p.flagged_budget, 1) for p in points]
        med = [p.median_distance for p in points]
        ax.plot(xs, med, marker="o", markersize=3, label=attack)
        ax.fill_between(xs, [p.q25 for p in points], [p.q75 for p in points],
                        alpha=0.15)
    ax.set_xscale("log")
    ax.set_xlabel("flagged queries")
    ax.set_ylabel(f"median {norm_label} distance")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def render_frontier(path: str, curves: dict[str, list[CurvePoint]],
                    target_distance: float, c_flagged: float = 1.0,
                    c0_grid: list[float] | None = None) -> None:
    """Cheapest cost to reach the target as the per-query price c0 sweeps.

    Attacks that never reach the target are left off the plot.
    """
    if c0_grid is None:
        c0_grid = [c_flagged * 10.0 ** e for e in range(-5, 1)]
    series: dict[str, list[float]] = {}
    for c0 in c0_grid:
        for entry in cost_frontier(curves, CostModel(c0, c_flagged),
                                   target_distance):
            if entry.attained:
                series.setdefault(entry.attack, []).append(entry.cost)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for attack in sorted(series):
        costs = series[attack]
        if len(costs) == len(c0_grid):
            ax.plot(c0_grid, costs, marker="o", markersize=3, label=attack)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("cost per query c0 (flagged surcharge = 1)")
    ax.set_ylabel(f"cost to reach distance {target_distance:g}")
    ax.grid(True, which="both", alpha=0.3)
    if series:
        ax.legend(fontsize=8)
    _save(fig, path)
