"""Ground-truth swarm simulators: 2D stable flocking and 3D boids.

The 2D swarm follows double-integrator dynamics under a global controller
that aligns velocities and shapes spacing through the pair potential
V(d) = 1/d^2 + log d^2 (minimum at d = 1), integrated with fixed-step RK4.

The 3D swarm is a frame-based boids simulation: cohesion, alignment, and
separation steering toward/away from neighbors within a communication ball,
plus a strongly weighted wall-avoidance steer inside a cube, with clamped
steering forces, speed limits, and a semi-implicit Euler update. Observers
log positions and unit headings only; speed stays internal to the engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .config import ExperimentConfig
from .errors import SimulationDivergenceError, SingularConfigurationError
from .sim_core import RngSpec, SwarmState, Trajectory, add_stabilization_noise, rollout

__all__ = [
    "Tanner2DParams",
    "BoidsParams",
    "tanner_control",
    "tanner_derivative",
    "init_2d_swarm",
    "boids_step",
    "boids_rollout",
    "init_3d_swarm",
    "Dataset",
    "generate_dataset",
]

# frames dropped from the head of every raw boids trajectory; the first few
# carry start-up transients from the uniform random initialization
BOIDS_DISCARD = 10

# constant initial boid speed, midpoint of the [min_speed, max_speed] band
BOIDS_INITIAL_SPEED = 3.5


@dataclass
class Tanner2DParams:
    """Global 2D flocking controller; every robot sees every other robot."""

    n: int = 10
    potential_form: str = "inverse_square_log"   # V(d) = 1/d^2 + log d^2

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("2D flocking needs at least 2 robots")


@dataclass
class BoidsParams:
    """Boids engine constants (defaults match the 3D experiment settings)."""

    min_speed: float = 2.0
    max_speed: float = 5.0
    comm_radius: float = 2.5
    avoid_radius: float = 1.0
    max_steer: float = 3.0
    w_cohesion: float = 1.0
    w_alignment: float = 1.0
    w_separation: float = 1.0
    scout_radius: float = 0.27
    max_search_dist: float = 5.0
    w_obstacle: float = 10.0
    cube_half_side: float = 5.0
    dt: float = 0.02

    def __post_init__(self):
        if not (0 < self.min_speed <= self.max_speed):
            raise ValueError("need 0 < min_speed <= max_speed")
        for name in ("comm_radius", "avoid_radius", "max_search_dist",
                     "cube_half_side", "scout_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


# ---------------------------------------------------------------------------
# 2D: global stable-flocking controller
# ---------------------------------------------------------------------------


def _tanner_accels(Z: SwarmState) -> np.ndarray:
    """Accelerations for all robots under the global controller.

    u_i = -sum_j (v_i - v_j) - sum_{j != i} V'(d_ij) (r_i - r_j) / d_ij
    with V(d) = 1/d^2 + log d^2, i.e. V'(d)/d = -2/d^4 + 2/d^2.
    """
    if Z.d != 4:
        raise ValueError("2D controller expects d=4 states")
    r = Z.positions
    v = Z.velocities
    n = Z.n
    if n == 1:
        return np.zeros((1, 2))
    diff = r[:, None, :] - r[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    off_diag = ~np.eye(n, dtype=bool)
    if (d2[off_diag] == 0.0).any():
        raise SingularConfigurationError("two robots coincide exactly")
    d2_safe = np.where(off_diag, d2, 1.0)
    coeff = np.where(off_diag, -2.0 / d2_safe**2 + 2.0 / d2_safe, 0.0)
    grad = np.einsum("ij,ijk->ik", coeff, diff)
    align = -(n * v - v.sum(axis=0))
    return align - grad


def tanner_control(i: int, Z: SwarmState) -> np.ndarray:
    """Acceleration command of robot i under the global controller."""
    return _tanner_accels(Z)[i]


def tanner_derivative(Z: SwarmState) -> SwarmState:
    """Double-integrator field: dr = v, dv = u(Z)."""
    out = np.empty_like(Z.states)
    out[:, 0:2] = Z.velocities
    out[:, 2:4] = _tanner_accels(Z)
    return SwarmState(out)


def init_2d_swarm(n: int, speed_range=(0.0, 3.0), bias_range=(0.0, 3.0),
                  rng: RngSpec = RngSpec(0)) -> SwarmState:
    """Positions uniform on a disk of radius sqrt(n); random velocities.

    The disk radius normalizes swarm density across sizes. Each robot gets
    an independent uniform-direction velocity with magnitude uniform in
    ``speed_range``, plus one shared bias velocity drawn the same way from
    ``bias_range``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng.generator()
    theta = gen.uniform(0.0, 2 * np.pi, size=n)
    rad = np.sqrt(n) * np.sqrt(gen.uniform(0.0, 1.0, size=n))
    pos = np.column_stack([rad * np.cos(theta), rad * np.sin(theta)])
    ang = gen.uniform(0.0, 2 * np.pi, size=n)
    mag = gen.uniform(speed_range[0], speed_range[1], size=n)
    vel = np.column_stack([mag * np.cos(ang), mag * np.sin(ang)])
    bias_ang = gen.uniform(0.0, 2 * np.pi)
    bias_mag = gen.uniform(bias_range[0], bias_range[1])
    vel += bias_mag * np.array([np.cos(bias_ang), np.sin(bias_ang)])
    return SwarmState(np.hstack([pos, vel]))


# ---------------------------------------------------------------------------
# 3D: boids in a cube
# ---------------------------------------------------------------------------


def _steer_towards(desired_dir: np.ndarray, vel: np.ndarray, p: BoidsParams) -> np.ndarray:
    """Steering force toward a desired direction, clamped to max_steer.

    desired_dir rows with zero norm produce zero steering.
    """
    norms = np.linalg.norm(desired_dir, axis=-1, keepdims=True)
    has_dir = norms[..., 0] > 0
    unit = np.where(norms > 0, desired_dir / np.where(norms > 0, norms, 1.0), 0.0)
    steer = unit * p.max_speed - vel
    smag = np.linalg.norm(steer, axis=-1, keepdims=True)
    scale = np.where(smag > p.max_steer, p.max_steer / np.where(smag > 0, smag, 1.0), 1.0)
    return np.where(has_dir[..., None], steer * scale, 0.0)


def boids_step(Z: SwarmState, p: BoidsParams, speeds: np.ndarray) -> tuple[SwarmState, np.ndarray]:
    """One boids frame; returns the new (positions, headings) state and speeds.

    Speed is engine state, not part of the logged observation, so it is
    threaded through explicitly. Raises ``SimulationDivergenceError`` when a
    robot ends up outside the cube by more than one side length.
    """
    if Z.d != 6:
        raise ValueError("boids expect 3D states (d=6)")
    r = Z.positions
    h = Z.headings
    n = Z.n
    speeds = np.asarray(speeds, dtype=float)
    if speeds.shape == ():
        speeds = np.full(n, float(speeds))
    v = h * speeds[:, None]

    diff = r[:, None, :] - r[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    in_comm = d2 <= p.comm_radius**2
    n_comm = in_comm.sum(axis=1)

    accel = np.zeros((n, 3))
    any_comm = n_comm > 0
    # cohesion: toward the average position of perceived neighbors
    centre = in_comm @ r / np.maximum(n_comm, 1)[:, None]
    coh_dir = np.where(any_comm[:, None], centre - r, 0.0)
    accel += p.w_cohesion * _steer_towards(coh_dir, v, p)
    # alignment: toward the summed heading of perceived neighbors
    align_dir = np.where(any_comm[:, None], in_comm @ h, 0.0)
    accel += p.w_alignment * _steer_towards(align_dir, v, p)
    # separation: away from neighbors inside the avoidance radius,
    # inverse-square weighted
    close = d2 <= p.avoid_radius**2
    with np.errstate(divide="ignore"):
        inv = np.where(close, 1.0 / d2, 0.0)
    sep_dir = np.einsum("ij,ijk->ik", inv, diff)
    accel += p.w_separation * _steer_towards(sep_dir, v, p)
    # wall avoidance: inverse-square repulsion from the projection onto each
    # face strictly closer than the search distance, gated on actually moving
    # toward that face (a scout ray along the heading would hit it), as one
    # aggregated steer
    wall_dir = np.zeros((n, 3))
    for axis in range(3):
        for face, outward in ((p.cube_half_side, 1.0), (-p.cube_half_side, -1.0)):
            s = r[:, axis] - face
            dist = np.abs(s)
            active = (dist < p.max_search_dist) & (v[:, axis] * outward > 0)
            contrib = np.where(active, s / np.maximum(dist, p.scout_radius) ** 2, 0.0)
            wall_dir[:, axis] += contrib
    accel += p.w_obstacle * _steer_towards(wall_dir, v, p)

    v_new = v + accel * p.dt
    vmag = np.linalg.norm(v_new, axis=1)
    degenerate = vmag == 0.0
    vmag_safe = np.where(degenerate, 1.0, vmag)
    heading = np.where(degenerate[:, None], h, v_new / vmag_safe[:, None])
    speed_new = np.clip(np.where(degenerate, p.min_speed, vmag),
                        p.min_speed, p.max_speed)
    r_new = r + heading * speed_new[:, None] * p.dt

    if (np.abs(r_new) > 3.0 * p.cube_half_side).any():
        worst = float(np.abs(r_new).max())
        raise SimulationDivergenceError(
            f"robot left the cube by more than one side length (|coord|={worst:.2f})")
    return SwarmState(np.hstack([r_new, heading])), speed_new


def boids_rollout(Z0: SwarmState, p: BoidsParams, frames: int,
                  initial_speed: float = BOIDS_INITIAL_SPEED) -> Trajectory:
    """Simulate ``frames`` total frames (including the initial one)."""
    if frames < 2:
        raise ValueError("frames must be >= 2")
    out = np.empty((frames, Z0.n, 6))
    out[0] = Z0.states
    Z = Z0
    speeds = np.full(Z0.n, initial_speed)
    for j in range(1, frames):
        Z, speeds = boids_step(Z, p, speeds)
        out[j] = Z.states
    return Trajectory(out, dt=p.dt, t0=0.0, space_tag="3d")


def init_3d_swarm(n: int, rng: RngSpec = RngSpec(0), radius: float = 5.0) -> SwarmState:
    """Positions uniform in a ball; headings uniform on the unit sphere."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = rng.generator()
    pos_dir = gen.normal(size=(n, 3))
    pos_dir /= np.linalg.norm(pos_dir, axis=1, keepdims=True)
    rad = radius * gen.uniform(0.0, 1.0, size=n) ** (1.0 / 3.0)
    pos = pos_dir * rad[:, None]
    heading = gen.normal(size=(n, 3))
    heading /= np.linalg.norm(heading, axis=1, keepdims=True)
    return SwarmState(np.hstack([pos, heading]))


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

# RngSpec stream ids: trajectory t uses 2t for initialization, 2t+1 for noise
_INIT_STREAM = 0
_NOISE_STREAM = 1


@dataclass
class Dataset:
    """Generated trajectories plus the manifest describing their provenance."""

    trajectories: List[Trajectory]
    manifest: dict

    @property
    def train(self) -> List[Trajectory]:
        return [t for t, rec in zip(self.trajectories, self.manifest["trajectories"])
                if rec["split"] == "train"]

    @property
    def test(self) -> List[Trajectory]:
        return [t for t, rec in zip(self.trajectories, self.manifest["trajectories"])
                if rec["split"] == "test"]


def generate_dataset(cfg: ExperimentConfig, rng: Optional[RngSpec] = None) -> Dataset:
    """Simulate the full observation dataset for one experiment config.

    2D trajectories run ``cfg.steps`` RK4 updates (so steps+1 snapshots);
    3D trajectories are ``cfg.steps`` raw frames with the first
    ``BOIDS_DISCARD`` dropped. The leading ``train_count`` trajectories get
    stabilization noise; the rest stay clean for testing. Regeneration from
    the same master seed is byte-identical.
    """
    cfg.validate()
    master = rng if rng is not None else RngSpec(cfg.seed)
    trajs: List[Trajectory] = []
    records = []
    for t in range(cfg.traj_count):
        init_rng = master.substream(2 * t + _INIT_STREAM)
        noise_rng = master.substream(2 * t + _NOISE_STREAM)
        if cfg.space == "2d":
            Z0 = init_2d_swarm(cfg.n, rng=init_rng)
            traj = rollout(tanner_derivative, Z0, steps=cfg.steps, h=cfg.dt,
                           space_tag="2d")
        else:
            Z0 = init_3d_swarm(cfg.n, rng=init_rng)
            p = BoidsParams(dt=cfg.dt, cube_half_side=5.0)
            raw = boids_rollout(Z0, p, frames=cfg.steps)
            traj = Trajectory(raw.states[BOIDS_DISCARD:], dt=cfg.dt,
                              t0=BOIDS_DISCARD * cfg.dt, space_tag="3d")
        split = "train" if t < cfg.train_count else "test"
        if split == "train" and cfg.noise_var > 0:
            traj = add_stabilization_noise(traj, cfg.noise_var, noise_rng)
        trajs.append(traj)
        records.append({
            "index": t,
            "split": split,
            "init_stream": init_rng.stream_id,
            "noise_stream": noise_rng.stream_id if split == "train" else None,
            "noise_var": cfg.noise_var if split == "train" else 0.0,
            "snapshots": traj.m,
        })
    manifest = {
        "format": "swarmlearn-manifest-v1",
        "master_seed": master.seed,
        "config": {k: getattr(cfg, k) for k in (
            "space", "n", "d_cr", "k", "tau", "hidden", "noise_var", "steps",
            "traj_count", "train_count", "dt", "d0_neighbor", "d0_wall",
            "gain_form", "a", "lr", "epochs", "batch_size", "seed")},
        "trajectories": records,
    }
    return Dataset(trajectories=trajs, manifest=manifest)
