"""Flocking metrics and evaluation harnesses.

avd (average velocity difference) is the mean over unordered robot pairs of
the velocity-difference norm; the 2/(n(n-1)) prefactor is exactly one over
the number of unordered pairs. amd (average minimum distance to a neighbor)
is the mean over robots of the nearest-neighbor distance. 3D runs report
amd plus the POD energy spectrum: stack snapshots into an m-by-(n*d)
matrix, remove the temporal mean, and normalize the squared singular
values; POD-KLD is the Kullback-Leibler divergence between the first-r
renormalized spectra of a prediction and its ground truth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .knode_controller import ControllerParams, predict_rollout
from .sim_core import RngSpec, SwarmState, Trajectory
from .sim_groundtruth import init_2d_swarm, init_3d_swarm

__all__ = [
    "MetricsReport",
    "GridSpec",
    "avd",
    "amd",
    "pod_energies",
    "pod_kld",
    "tail_mean",
    "confidence_interval",
    "grid_search",
    "scaling_eval",
    "scaled_initial_state",
]

log = logging.getLogger("swarmlearn.metrics")

# energies are floored here before renormalization inside the KLD so the
# ratio p/q never divides by zero
KLD_FLOOR = 1e-12


@dataclass
class MetricsReport:
    """Metric series and scalars for one evaluated rollout."""

    avd_series: Optional[np.ndarray]
    amd_series: np.ndarray
    pod_energies: Optional[np.ndarray] = None
    pod_kld: Optional[float] = None
    metadata: Dict = field(default_factory=dict)


@dataclass
class GridSpec:
    """Protocol of a (d_cr, k) hyperparameter grid search."""

    d_cr_values: Sequence[float]
    k_values: Sequence[int]
    seeds_per_cell: int = 20
    steps: int = 2000
    tail_window: int = 10

    def __post_init__(self):
        if not self.d_cr_values or not self.k_values:
            raise ValueError("grid axes must be nonempty")


def avd(traj: Trajectory) -> np.ndarray:
    """Mean pairwise velocity-difference norm per step (2D only)."""
    if traj.d != 4:
        raise ValueError("avd requires 2D states carrying velocities")
    n = traj.n
    if n < 2:
        raise ValueError("avd needs at least 2 robots")
    v = traj.states[:, :, 2:4]
    iu, ju = np.triu_indices(n, 1)
    dv = v[:, iu, :] - v[:, ju, :]
    return np.linalg.norm(dv, axis=2).mean(axis=1)


def amd(traj: Trajectory) -> np.ndarray:
    """Mean nearest-neighbor distance per step."""
    n = traj.n
    if n < 2:
        raise ValueError("amd needs at least 2 robots")
    pos_dim = 2 if traj.d == 4 else 3
    r = traj.states[:, :, :pos_dim]
    diff = r[:, :, None, :] - r[:, None, :, :]
    d = np.linalg.norm(diff, axis=3)
    d[:, np.arange(n), np.arange(n)] = np.inf
    return d.min(axis=2).mean(axis=1)


def pod_energies(traj: Trajectory, r: int) -> np.ndarray:
    """Normalized energies of the first r POD modes.

    A rank-deficient (all-identical) trajectory returns [1, 0, ...]: all of
    nothing is still all of it.
    """
    m = traj.m
    flat = traj.states.reshape(m, -1)
    if r > min(m, flat.shape[1]):
        raise ValueError(f"r={r} exceeds min(m, n*d)={min(m, flat.shape[1])}")
    centered = flat - flat.mean(axis=0, keepdims=True)
    sigma = np.linalg.svd(centered, compute_uv=False)
    energy = sigma * sigma
    total = energy.sum()
    scale = max(1.0, float(np.square(flat).sum()))
    if total <= 1e-24 * scale:            # constant trajectory (up to rounding)
        out = np.zeros(r)
        out[0] = 1.0
        return out
    return energy[:r] / total


def pod_kld(pred: Trajectory, truth: Trajectory, r: int) -> float:
    """D_KL(pred || truth) between renormalized first-r POD spectra."""
    if (pred.n, pred.d) != (truth.n, truth.d):
        raise ValueError("trajectories disagree on (n, d)")
    p = np.maximum(pod_energies(pred, r), KLD_FLOOR)
    q = np.maximum(pod_energies(truth, r), KLD_FLOOR)
    p = p / p.sum()
    q = q / q.sum()
    return float(np.sum(p * np.log(p / q)))


def tail_mean(series: np.ndarray, window: int) -> float:
    """Mean of the final ``window`` entries."""
    if window < 1:
        raise ValueError("window must be >= 1")
    return float(np.asarray(series)[-window:].mean())


def confidence_interval(samples: np.ndarray, axis: int = 0):
    """Mean and normal-approximation 95% band across sample runs."""
    samples = np.asarray(samples, dtype=float)
    mean = samples.mean(axis=axis)
    count = samples.shape[axis]
    half = 1.96 * samples.std(axis=axis, ddof=1) / np.sqrt(count) if count > 1 \
        else np.zeros_like(mean)
    return mean, mean - half, mean + half


# ---------------------------------------------------------------------------
# experiment harnesses
# ---------------------------------------------------------------------------

# cells whose mean amd exceeds this are flagged in grid results (rendered
# blank in summary plots): the swarm dispersed instead of flocking
AMD_FLAG_THRESHOLD = 3.0


def grid_search(gs: GridSpec, pipeline: Callable[[float, int], Dict[str, List[float]]]):
    """Evaluate ``pipeline`` on every (d_cr, k) cell.

    ``pipeline(d_cr, k)`` trains a controller and returns per-run
    tail-window metric values, e.g. {"avd": [...], "amd": [...]}; this
    harness reduces them to means and medians. A cell whose pipeline raises
    is recorded as missing rather than aborting the sweep.
    """
    rows = []
    for d_cr in gs.d_cr_values:
        for k in gs.k_values:
            row = {"d_cr": d_cr, "k": k, "error": ""}
            try:
                metrics = pipeline(d_cr, k)
            except Exception as e:  # noqa: BLE001 - cell isolation is the point
                log.warning("grid cell (d_cr=%s, k=%s) failed: %s", d_cr, k, e)
                row["error"] = str(e)
                rows.append(row)
                continue
            for name, values in sorted(metrics.items()):
                arr = np.asarray(values, dtype=float)
                row[f"{name}_mean"] = float(arr.mean())
                row[f"{name}_median"] = float(np.median(arr))
                row[f"{name}_runs"] = int(arr.size)
            if "amd_mean" in row:
                row["amd_flagged"] = bool(row["amd_mean"] > AMD_FLAG_THRESHOLD)
            rows.append(row)
    return rows


def scaled_initial_state(space: str, n: int, rng: RngSpec) -> SwarmState:
    """Initialization preserving the 10-robot training density.

    2D: disk of radius sqrt(n). 3D: ball of radius 5 (n/10)^(1/3), headings
    uniform on the sphere.
    """
    if space == "2d":
        return init_2d_swarm(n, rng=rng)
    return init_3d_swarm(n, rng=rng, radius=5.0 * (n / 10.0) ** (1.0 / 3.0))


def scaling_eval(params: ControllerParams, sizes: Sequence[int], runs_per_size: int,
                 steps: int, h: float, seed: int = 0, tail_window: int = 10):
    """Box statistics of tail-window metrics across swarm sizes.

    Returns {size: {metric: {min, q1, median, q3, max, values}}}; metrics
    are avd and amd in 2D, amd in 3D (POD-KLD needs a size-matched ground
    truth, which this harness does not have).
    """
    space = params.meta.space
    out = {}
    for size_idx, size in enumerate(sizes):
        if size < 2:
            raise ValueError("sizes must be >= 2 robots")
        values: Dict[str, List[float]] = {"amd": []}
        if space == "2d":
            values["avd"] = []
        for run in range(runs_per_size):
            rng = RngSpec(seed, 1000 * size_idx + run)
            Z0 = scaled_initial_state(space, size, rng)
            traj = predict_rollout(params, Z0, steps=steps, h=h)
            values["amd"].append(tail_mean(amd(traj), tail_window))
            if space == "2d":
                values["avd"].append(tail_mean(avd(traj), tail_window))
        out[size] = {
            name: {
                "min": float(np.min(v)),
                "q1": float(np.percentile(v, 25)),
                "median": float(np.median(v)),
                "q3": float(np.percentile(v, 75)),
                "max": float(np.max(v)),
                "values": [float(x) for x in v],
            }
            for name, v in values.items()
        }
    return out
