"""Static SVG plot emission for metric series, box statistics, and grids."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["series_plot_svg", "box_plot_svg", "grid_plot_svg", "snapshots_plot_svg"]


def series_plot_svg(path, x, curves: Dict[str, dict], xlabel: str, ylabel: str,
                    title: str = "") -> Path:
    """Line plot with optional shaded 95% bands.

    curves maps label -> {"mean": array, "lo": array?, "hi": array?}.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, data in curves.items():
        ax.plot(x, data["mean"], label=label)
        if "lo" in data and "hi" in data:
            ax.fill_between(x, data["lo"], data["hi"], alpha=0.25)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def box_plot_svg(path, positions: Sequence[float], values: Sequence[Sequence[float]],
                 xlabel: str, ylabel: str, title: str = "") -> Path:
    """Box-and-whisker plot of per-position sample sets."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot(list(values), positions=list(range(len(positions))), widths=0.6)
    ax.set_xticks(range(len(positions)), [str(p) for p in positions])
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def grid_plot_svg(path, d_cr_values: Sequence[float], k_values: Sequence[int],
                  matrix: np.ndarray, title: str,
                  flag_above: Optional[float] = None) -> Path:
    """Heat map of a grid-search metric; cells above ``flag_above`` render white."""
    data = np.array(matrix, dtype=float)
    masked = np.ma.masked_invalid(data)
    if flag_above is not None:
        masked = np.ma.masked_greater(masked, flag_above)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("white")
    im = ax.imshow(masked, cmap=cmap, aspect="auto", origin="lower")
    ax.set_xticks(range(len(d_cr_values)), [str(v) for v in d_cr_values])
    ax.set_yticks(range(len(k_values)), [str(v) for v in k_values])
    ax.set_xlabel("communication radius")
    ax.set_ylabel("active neighbors k")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def snapshots_plot_svg(path, traj, steps: Sequence[int], title: str = "") -> Path:
    """Scatter snapshots of a 2D swarm at selected step indices."""
    fig, axes = plt.subplots(1, len(steps), figsize=(3 * len(steps), 3))
    if len(steps) == 1:
        axes = [axes]
    for ax, step in zip(axes, steps):
        pos = traj.states[step, :, :2]
        ax.scatter(pos[:, 0], pos[:, 1], s=12)
        ax.set_title(f"t = {step}")
        ax.set_aspect("equal")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out
