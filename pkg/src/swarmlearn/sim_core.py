"""State and trajectory containers, fixed-step RK4, and seeded noise injection.

All simulation and training code in this package moves data through two
containers: ``SwarmState`` (an n-by-d matrix, one robot per row) and
``Trajectory`` (a time-ordered stack of states with sampling metadata).
Randomness goes through ``RngSpec``, a counter-based stream keyed by
(seed, stream_id) so independent trajectories can be generated in any
order, or in parallel, without changing a single bit of the output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .errors import IntegrationFailureError

__all__ = [
    "RngSpec",
    "SwarmState",
    "Trajectory",
    "rk4_step",
    "rollout",
    "add_stabilization_noise",
]


@dataclass(frozen=True)
class RngSpec:
    """Counter-based random stream keyed by (seed, stream_id).

    Identical (seed, stream_id) pairs reproduce identical draws bit for
    bit. Substreams are cheap: derive one per trajectory (or per purpose)
    instead of sharing a sequential generator.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed % 2**64, self.stream_id % 2**64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, offset: int) -> "RngSpec":
        return RngSpec(self.seed, self.stream_id + offset)


class SwarmState:
    """States of all robots at one instant; robot i is row i.

    In 2D each row is [rx, ry, vx, vy] (d=4); in 3D each row is
    [rx, ry, rz, hx, hy, hz] with h a unit heading (d=6). Other widths are
    allowed for generic integrator use.
    """

    __slots__ = ("states",)

    def __init__(self, states):
        arr = np.array(states, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"states must be 2-D (n, d), got shape {arr.shape}")
        self.states = arr

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def pos_dim(self) -> int:
        if self.d == 4:
            return 2
        if self.d == 6:
            return 3
        raise ValueError(f"no position convention for d={self.d}")

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, : self.pos_dim]

    @property
    def velocities(self) -> np.ndarray:
        """Velocity block of a 2D state."""
        if self.d != 4:
            raise ValueError("velocities are only defined for 2D states (d=4)")
        return self.states[:, 2:4]

    @property
    def headings(self) -> np.ndarray:
        """Unit-heading block of a 3D state."""
        if self.d != 6:
            raise ValueError("headings are only defined for 3D states (d=6)")
        return self.states[:, 3:6]

    def copy(self) -> "SwarmState":
        return SwarmState(self.states.copy())

    def validate(self, heading_tol: float = 1e-9) -> None:
        """Check finiteness, and unit headings for 3D states.

        Noise-injected training data intentionally violates the heading
        invariant, so validation is opt-in rather than enforced on
        construction.
        """
        if not np.isfinite(self.states).all():
            raise ValueError("state contains non-finite entries")
        if self.d == 6:
            norms = np.linalg.norm(self.headings, axis=1)
            if np.abs(norms - 1.0).max() > heading_tol:
                raise ValueError("3D headings are not unit norm")

    def __eq__(self, other) -> bool:
        return isinstance(other, SwarmState) and np.array_equal(self.states, other.states)

    def __repr__(self) -> str:
        return f"SwarmState(n={self.n}, d={self.d})"


class Trajectory:
    """Time-ordered snapshots of a swarm sampled every ``dt`` time units."""

    __slots__ = ("states", "dt", "t0", "space_tag")

    def __init__(self, states, dt: float, t0: float = 0.0, space_tag: str | None = None):
        arr = np.array(states, dtype=float)
        if arr.ndim != 3:
            raise ValueError(f"trajectory states must be (m, n, d), got {arr.shape}")
        if dt <= 0:
            raise ValueError("dt must be positive")
        if space_tag is None:
            space_tag = {4: "2d", 6: "3d"}.get(arr.shape[2], "generic")
        self.states = arr
        self.dt = float(dt)
        self.t0 = float(t0)
        self.space_tag = space_tag

    @classmethod
    def from_snapshots(cls, snapshots: List[SwarmState], dt: float, t0: float = 0.0,
                       space_tag: str | None = None) -> "Trajectory":
        if not snapshots:
            raise ValueError("empty snapshot list")
        shape0 = snapshots[0].states.shape
        for s in snapshots[1:]:
            if s.states.shape != shape0:
                raise ValueError("snapshots disagree on (n, d)")
        return cls(np.stack([s.states for s in snapshots]), dt, t0, space_tag)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    def snapshot(self, j: int) -> SwarmState:
        return SwarmState(self.states[j])

    @property
    def snapshots(self) -> List[SwarmState]:
        return [SwarmState(self.states[j]) for j in range(self.m)]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.m)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Trajectory)
            and np.array_equal(self.states, other.states)
            and self.dt == other.dt
            and self.t0 == other.t0
            and self.space_tag == other.space_tag
        )

    def __repr__(self) -> str:
        return (f"Trajectory(m={self.m}, n={self.n}, d={self.d}, dt={self.dt}, "
                f"t0={self.t0}, space={self.space_tag!r})")


DerivFn = Callable[[SwarmState], SwarmState]


def _stage_eval(deriv: DerivFn, Z: np.ndarray, stage: str) -> np.ndarray:
    k = deriv(SwarmState(Z)).states
    if k.shape != Z.shape:
        raise IntegrationFailureError(
            f"derivative shape {k.shape} does not match state shape {Z.shape} at {stage}",
            where=stage,
        )
    if not np.isfinite(k).all():
        raise IntegrationFailureError(f"non-finite derivative at {stage}", where=stage)
    return k


def rk4_step(deriv: DerivFn, Z: SwarmState, h: float) -> SwarmState:
    """One explicit fourth-order Runge-Kutta step of size ``h``.

    Z_next = Z + (h/6) (k1 + 2 k2 + 2 k3 + k4). Deterministic; raises
    ``IntegrationFailureError`` naming the stage if the derivative goes
    non-finite.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    z = Z.states
    k1 = _stage_eval(deriv, z, "k1")
    k2 = _stage_eval(deriv, z + 0.5 * h * k1, "k2")
    k3 = _stage_eval(deriv, z + 0.5 * h * k2, "k3")
    k4 = _stage_eval(deriv, z + h * k3, "k4")
    out = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(out).all():
        raise IntegrationFailureError("non-finite state after RK4 update", where="update")
    return SwarmState(out)


def rollout(deriv: DerivFn, Z0: SwarmState, steps: int, h: float,
            t0: float = 0.0, space_tag: str | None = None) -> Trajectory:
    """Integrate ``steps`` RK4 steps from Z0; returns steps+1 snapshots."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    out = np.empty((steps + 1,) + Z0.states.shape)
    out[0] = Z0.states
    Z = Z0
    for j in range(steps):
        try:
            Z = rk4_step(deriv, Z, h)
        except IntegrationFailureError as e:
            raise IntegrationFailureError(f"step {j}: {e}", where=j) from e
        out[j + 1] = Z.states
    return Trajectory(out, dt=h, t0=t0, space_tag=space_tag)


def add_stabilization_noise(traj: Trajectory, variance: float, rng: RngSpec) -> Trajectory:
    """Return a copy of ``traj`` with i.i.d. N(0, variance) added to every entry.

    The input trajectory is left untouched. variance=0 returns an equal copy.
    """
    if variance < 0:
        raise ValueError("noise variance must be nonnegative")
    states = traj.states.copy()
    if variance > 0:
        gen = rng.generator()
        states += gen.normal(0.0, np.sqrt(variance), size=states.shape)
    return Trajectory(states, dt=traj.dt, t0=traj.t0, space_tag=traj.space_tag)
