"""Potential-field knowledge: obstacle potentials, repulsive forces, gains.

The embedded knowledge is an inverse-square potential U(d) = lam / (2 d^2)
that switches on inside an influence threshold d0. Its negative gradient is
a repulsive force of magnitude lam / d^3 pointing from the obstacle toward
the robot. Gains are trainable through a scalar phi per obstacle class:
lam = a + phi^2 (offset form, keeps a minimum floor a > 0) or lam = phi^2.

Besides the scalar reference operations, this module provides vectorized
force evaluations with hand-coded vector-Jacobian products; the trainer
backpropagates through these to learn phi.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import SingularConfigurationError
from .sim_core import SwarmState

__all__ = [
    "PotentialSpec",
    "ObstacleSet",
    "gain_value",
    "gain_derivative",
    "potential",
    "repulsive_force",
    "neighbor_obstacle",
    "wall_obstacles",
    "total_repulsion",
    "closest_neighbor_force",
    "closest_neighbor_force_vjp",
    "wall_force",
    "wall_force_vjp",
]

# distances are clamped below this inside vectorized gradient evaluation to
# avoid overflow early in training; a numerical safeguard, not model semantics
DIST_FLOOR = 1e-6

GAIN_FORMS = ("offset_square", "square")


def gain_value(gain_form: str, a: float, phi: float) -> float:
    """Resolve the repulsion gain lam from the trainable scalar phi."""
    if gain_form == "offset_square":
        return a + phi * phi
    if gain_form == "square":
        return phi * phi
    raise ValueError(f"unknown gain_form {gain_form!r}")


def gain_derivative(gain_form: str, a: float, phi: float) -> float:
    """d lam / d phi for either gain form (the offset does not depend on phi)."""
    if gain_form not in GAIN_FORMS:
        raise ValueError(f"unknown gain_form {gain_form!r}")
    return 2.0 * phi


@dataclass
class PotentialSpec:
    """Influence threshold plus the trainable-gain parameterization."""

    d0: float
    gain_form: str = "offset_square"
    a: float = 0.5
    phi: float = 1.0

    def __post_init__(self):
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")
        if self.gain_form == "offset_square" and self.a <= 0:
            raise ValueError("offset a must be positive")

    @property
    def gain(self) -> float:
        return gain_value(self.gain_form, self.a, self.phi)


@dataclass
class ObstacleSet:
    """Obstacle points tagged with their class ('neighbor' or 'wall')."""

    points: List[Tuple[np.ndarray, str]] = field(default_factory=list)

    def add(self, point, tag: str) -> None:
        self.points.append((np.asarray(point, dtype=float), tag))


def potential(dist: float, lam: float, d0: float) -> float:
    """U(d) = lam / (2 d^2) inside the threshold, 0 outside."""
    if dist == 0:
        raise SingularConfigurationError("potential evaluated at zero distance")
    if dist > d0:
        return 0.0
    return lam / (2.0 * dist * dist)


def repulsive_force(z_pos, obs, lam: float, d0: float) -> np.ndarray:
    """-grad U: magnitude lam / d^3, directed from the obstacle to the robot."""
    z_pos = np.asarray(z_pos, dtype=float)
    obs = np.asarray(obs, dtype=float)
    delta = z_pos - obs
    d2 = float(delta @ delta)
    if d2 == 0.0:
        raise SingularConfigurationError("robot coincides with obstacle")
    if d2 > d0 * d0:
        return np.zeros_like(delta)
    return lam * delta / (d2 * d2)


def neighbor_obstacle(i: int, Z: SwarmState, d0: float) -> Optional[np.ndarray]:
    """Position of robot i's closest neighbor, if any lies within d0."""
    pos = Z.positions
    if Z.n < 2:
        return None
    d2 = np.sum((pos - pos[i]) ** 2, axis=1)
    d2[i] = np.inf
    j = int(np.argmin(d2))
    if d2[j] <= d0 * d0:
        return pos[j].copy()
    return None


def wall_obstacles(z_pos, half_side: float, d0: float) -> List[np.ndarray]:
    """Projections of a 3D position onto each cube face, kept if within d0."""
    p = np.asarray(z_pos, dtype=float)
    out = []
    for axis in range(3):
        for face in (half_side, -half_side):
            if abs(p[axis] - face) <= d0:
                o = p.copy()
                o[axis] = face
                out.append(o)
    return out


def total_repulsion(z_pos, obstacles: ObstacleSet, specs: dict) -> np.ndarray:
    """Sum of per-obstacle repulsive forces with class-resolved gains."""
    z_pos = np.asarray(z_pos, dtype=float)
    force = np.zeros_like(z_pos)
    for point, tag in obstacles.points:
        spec = specs[tag]
        force += repulsive_force(z_pos, point, spec.gain, spec.d0)
    return force


# ---------------------------------------------------------------------------
# vectorized force kernels with VJPs (used by the trainer and rollouts)
# ---------------------------------------------------------------------------


def closest_neighbor_force(pos, src, lam: float, d0: float):
    """Repulsion from each robot's single closest source point within d0.

    pos: (..., n, p) robot positions; src: (..., n, p) candidate obstacle
    positions (the same array in 2D, the delayed snapshot in 3D). Source
    j = i is never a candidate. Returns (force, cache); the cache feeds
    ``closest_neighbor_force_vjp``.
    """
    pos = np.asarray(pos, dtype=float)
    src = np.asarray(src, dtype=float)
    n = pos.shape[-2]
    diff = pos[..., :, None, :] - src[..., None, :, :]
    d2 = np.einsum("...ijk,...ijk->...ij", diff, diff)
    eye = np.eye(n, dtype=bool)
    d2 = np.where(eye, np.inf, d2)
    jmin = np.argmin(d2, axis=-1)
    dmin2 = np.take_along_axis(d2, jmin[..., None], axis=-1)[..., 0]
    active = dmin2 <= d0 * d0
    if n < 2:
        active = np.zeros_like(active)
        dmin2 = np.ones_like(dmin2)
    dmin2 = np.maximum(dmin2, DIST_FLOOR * DIST_FLOOR)
    delta = np.take_along_axis(diff, jmin[..., None, None], axis=-2)[..., 0, :]
    base = np.where(active[..., None], delta / (dmin2 * dmin2)[..., None], 0.0)
    cache = {"delta": delta, "dmin2": dmin2, "jmin": jmin, "active": active,
             "lam": lam, "shape": pos.shape}
    return lam * base, cache


def closest_neighbor_force_vjp(cache, cot):
    """VJP of ``closest_neighbor_force``.

    Returns (g_pos, g_src, g_lam) for the cotangent ``cot`` on the force.
    The argmin selection is treated as locally constant (it is, except on a
    measure-zero switching set).
    """
    delta, dmin2, jmin = cache["delta"], cache["dmin2"], cache["jmin"]
    active, lam = cache["active"], cache["lam"]
    inv4 = 1.0 / (dmin2 * dmin2)
    base = np.where(active[..., None], delta * inv4[..., None], 0.0)
    g_lam = float(np.sum(base * cot))
    dot = np.einsum("...k,...k->...", delta, cot)
    g_delta = lam * np.where(
        active[..., None],
        cot * inv4[..., None] - 4.0 * delta * (dot * inv4 / dmin2)[..., None],
        0.0,
    )
    g_pos = g_delta.copy()
    g_src = np.zeros(cache["shape"])
    flat_g = g_delta.reshape(-1, g_delta.shape[-1])
    flat_j = jmin.reshape(-1)
    n = cache["shape"][-2]
    rows = np.arange(flat_j.size) // n * n + flat_j
    np.subtract.at(g_src.reshape(-1, g_src.shape[-1]), rows, flat_g)
    return g_pos, g_src, g_lam


def wall_force(pos, half_side: float, lam: float, d0: float):
    """Summed repulsion from the six cube-face projections within d0.

    pos: (..., n, 3). The projection onto a face shares the tangential
    coordinates of the robot, so the force reduces to an axis-aligned
    inverse-cube push off each nearby face.
    """
    pos = np.asarray(pos, dtype=float)
    force = np.zeros_like(pos)
    cache = {"lam": lam, "terms": [], "shape": pos.shape}
    for axis in range(3):
        for face in (half_side, -half_side):
            s = pos[..., axis] - face              # signed offset from face plane
            d2 = np.maximum(s * s, DIST_FLOOR * DIST_FLOOR)
            active = np.abs(s) <= d0
            contrib = np.where(active, s / (d2 * d2), 0.0)
            force[..., axis] += lam * contrib
            cache["terms"].append((axis, s, d2, active))
    return force, cache


def wall_force_vjp(cache, cot):
    """VJP of ``wall_force``: returns (g_pos, g_lam)."""
    lam = cache["lam"]
    g_pos = np.zeros(cache["shape"])
    g_lam = 0.0
    for axis, s, d2, active in cache["terms"]:
        base = np.where(active, s / (d2 * d2), 0.0)
        g_lam += float(np.sum(base * cot[..., axis]))
        # d/ds [s (s^2)^-2] = s^-4 - 4 s^2 s^-6 = -3 / s^4
        dfds = np.where(active, -3.0 / (d2 * d2), 0.0)
        g_pos[..., axis] += lam * dfds * cot[..., axis]
    return g_pos, g_lam
