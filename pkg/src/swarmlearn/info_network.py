"""Decentralized information network: shift operator and local info structures.

Each robot acts on a k-by-d matrix Y_i(t): its own current state in row 0,
then the time-delayed states of its closest active neighbors in ascending
order of distance (measured at the delayed snapshot, where membership is
decided), zero-padded to k rows. Communication is limited to a radius
``d_cr`` and at most k robots including self.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .sim_core import SwarmState, Trajectory

__all__ = [
    "ShiftOperator",
    "InfoStructure",
    "BatchInfo",
    "shift_operator",
    "active_neighbors",
    "info_structure",
    "batch_info",
    "infos_from_arrays",
]


@dataclass
class ShiftOperator:
    """Binary adjacency of the communication graph at one time index."""

    adjacency: np.ndarray
    t: int = 0

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


@dataclass
class InfoStructure:
    """Local information matrix Y_i: k rows of d state entries.

    ``valid_count`` rows hold data (row 0 is robot i's own current state);
    the rest are exactly zero.
    """

    rows: np.ndarray
    valid_count: int

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    def flatten(self) -> np.ndarray:
        return self.rows.reshape(-1)


def shift_operator(positions: np.ndarray, d_cr: float) -> ShiftOperator:
    """Adjacency S with S_ij = 1 iff ||r_i - r_j|| <= d_cr.

    Symmetric with unit diagonal (self-distance is zero).
    """
    if d_cr <= 0:
        raise ValueError("d_cr must be positive")
    pos = np.asarray(positions, dtype=float)
    diff = pos[:, None, :] - pos[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    adj = (d2 <= d_cr * d_cr).astype(np.int8)
    return ShiftOperator(adjacency=adj)


def active_neighbors(S: ShiftOperator, i: int, positions: np.ndarray, k: int) -> List[int]:
    """Indices of robot i's active neighbors, self first, closest-first.

    At most k entries (k counts robot i itself). Ties break toward the
    lower robot index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pos = np.asarray(positions, dtype=float)
    d2 = np.sum((pos - pos[i]) ** 2, axis=1)
    candidates = [j for j in range(S.n) if S.adjacency[i, j] and j != i]
    candidates.sort(key=lambda j: (d2[j], j))
    return [i] + candidates[: k - 1]


def info_structure(Z_now: SwarmState, Z_del: SwarmState, S_del: ShiftOperator,
                   i: int, k: int) -> InfoStructure:
    """Assemble Y_i from the current own state and delayed neighbor states.

    Row 0 is z_i at the current time; rows 1.. are z_j at the delayed time
    for the k-1 closest active neighbors, ordered by distance in the
    delayed snapshot; remaining rows are zero.
    """
    if Z_now.states.shape != Z_del.states.shape:
        raise ValueError("current and delayed snapshots disagree on shape")
    d = Z_now.d
    order = active_neighbors(S_del, i, Z_del.positions, k)
    rows = np.zeros((k, d))
    rows[0] = Z_now.states[i]
    for slot, j in enumerate(order[1:], start=1):
        rows[slot] = Z_del.states[j]
    return InfoStructure(rows=rows, valid_count=len(order))


def infos_from_arrays(Z_now: np.ndarray, Z_del: np.ndarray, d_cr: float, k: int,
                      pos_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Y construction for a batch of snapshot pairs.

    Z_now, Z_del: (..., n, d) arrays sharing leading batch dims. Returns
    (Y, valid_count) with Y shaped (..., n, k, d). Equivalent to calling
    ``info_structure`` per (batch, robot) pair.
    """
    Z_now = np.asarray(Z_now, dtype=float)
    Z_del = np.asarray(Z_del, dtype=float)
    *batch, n, d = Z_now.shape
    pos = Z_del[..., :pos_dim]
    diff = pos[..., :, None, :] - pos[..., None, :, :]
    d2 = np.einsum("...ijk,...ijk->...ij", diff, diff)
    eye = np.eye(n, dtype=bool)
    d2 = np.where(eye, np.inf, d2)                     # self handled separately
    d2 = np.where(d2 <= d_cr * d_cr, d2, np.inf)       # outside radius: inactive
    # stable argsort keeps lower indices first among exact ties
    slots = min(k - 1, n)
    order = np.argsort(d2, axis=-1, kind="stable")[..., :slots]
    sorted_d2 = np.take_along_axis(d2, order, axis=-1)
    valid = np.isfinite(sorted_d2)                     # (..., n, slots)
    gathered = np.take_along_axis(
        np.broadcast_to(Z_del[..., None, :, :], (*batch, n, n, d)),
        order[..., None], axis=-2,
    )
    gathered = np.where(valid[..., None], gathered, 0.0)
    if slots < k - 1:                                  # swarm smaller than k
        pad = np.zeros((*batch, n, k - 1 - slots, d))
        gathered = np.concatenate([gathered, pad], axis=-2)
    Y = np.concatenate([Z_now[..., :, None, :], gathered], axis=-2)
    valid_count = 1 + valid.sum(axis=-1)
    return Y, valid_count


@dataclass
class BatchInfo:
    """Info structures for every usable time step of a trajectory.

    ``Y[t - t_offset, i]`` is Y_i(t) for t in [tau, m-2]; the last snapshot
    is excluded because it only ever serves as a prediction target.
    """

    Y: np.ndarray
    valid_count: np.ndarray
    t_offset: int

    def at(self, t: int, i: int) -> InfoStructure:
        idx = t - self.t_offset
        return InfoStructure(rows=self.Y[idx, i].copy(),
                             valid_count=int(self.valid_count[idx, i]))


def batch_info(traj: Trajectory, d_cr: float, k: int, tau: int) -> BatchInfo:
    """Y_i(t) for all robots and all usable steps t in [tau, m-2]."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    m = traj.m
    if tau >= m - 1:
        raise ValueError(f"tau={tau} leaves no usable steps in a length-{m} trajectory")
    pos_dim = 2 if traj.d == 4 else 3
    now = traj.states[tau : m - 1]
    delayed = traj.states[0 : m - 1 - tau]
    Y, valid = infos_from_arrays(now, delayed, d_cr, k, pos_dim)
    return BatchInfo(Y=Y, valid_count=valid, t_offset=tau)
