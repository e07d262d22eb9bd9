"""Learnable hybrid single-robot dynamics: neural controller + repulsion.

The control network is a single tanh layer over the flattened local
information matrix Y_i: u = W2 tanh(W1 y + b1) + b2. The hybrid field adds
the potential-field knowledge term on top:

  2D (second order):  dr_i = v_i,  dv_i = u_i - lam_n * grad U(closest nbr)
  3D (first order):   dr_i = u_i - lam_n * grad U(closest nbr)
                              - lam_w * sum grad U(cube faces)

In 3D the heading is not an integrated state: after each Euler step the
stored heading is the normalized net position derivative (previous heading
if that derivative vanishes), which keeps heading consistent with motion by
construction.

Everything here is pure given the parameters; gradients are hand-coded
reverse mode, exact for the computation as executed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from .errors import IntegrationFailureError
from .info_network import infos_from_arrays
from .knowledge import (
    closest_neighbor_force,
    closest_neighbor_force_vjp,
    gain_derivative,
    gain_value,
    wall_force,
    wall_force_vjp,
)
from .sim_core import SwarmState, Trajectory

__all__ = [
    "ControllerMeta",
    "ControllerParams",
    "init_controller",
    "mlp_forward",
    "controller_gradients",
    "hybrid_derivative_2d",
    "hybrid_derivative_3d",
    "predict_rollout",
]

# headings fall back to their previous value when the commanded velocity
# norm drops below this
HEADING_EPS = 1e-9


@dataclass
class ControllerMeta:
    """Structural hyperparameters a controller was built with."""

    space: str                    # {2d, 3d}
    k: int
    d: int                        # state dimension (4 or 6)
    hidden: int = 128
    d_cr: float = 5.0
    tau: int = 0
    d0_neighbor: float = 1.0
    d0_wall: float = 1.0
    gain_form: str = "offset_square"
    a: float = 0.5
    cube_half_side: float = 5.0

    @property
    def out_dim(self) -> int:
        return 2 if self.space == "2d" else 3

    @property
    def pos_dim(self) -> int:
        return 2 if self.space == "2d" else 3

    @property
    def input_dim(self) -> int:
        return self.k * self.d


@dataclass
class ControllerParams:
    """Network weights plus the trainable repulsion-gain scalars."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    phi_neighbor: float
    phi_wall: Optional[float]
    meta: ControllerMeta

    def lambda_neighbor(self) -> float:
        return gain_value(self.meta.gain_form, self.meta.a, self.phi_neighbor)

    def lambda_wall(self) -> float:
        if self.phi_wall is None:
            raise ValueError("this controller has no wall gain (2D)")
        return gain_value(self.meta.gain_form, self.meta.a, self.phi_wall)

    def copy(self) -> "ControllerParams":
        return replace(self, W1=self.W1.copy(), b1=self.b1.copy(),
                       W2=self.W2.copy(), b2=self.b2.copy())

    def param_names(self) -> List[str]:
        names = ["W1", "b1", "W2", "b2", "phi_neighbor"]
        if self.phi_wall is not None:
            names.append("phi_wall")
        return names

    def to_vector(self) -> np.ndarray:
        parts = [self.W1.ravel(), self.b1, self.W2.ravel(), self.b2,
                 [self.phi_neighbor]]
        if self.phi_wall is not None:
            parts.append([self.phi_wall])
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    def from_vector(self, vec: np.ndarray) -> "ControllerParams":
        vec = np.asarray(vec, dtype=float)
        out = self.copy()
        i = 0
        for name in ("W1", "b1", "W2", "b2"):
            arr = getattr(self, name)
            setattr(out, name, vec[i:i + arr.size].reshape(arr.shape).copy())
            i += arr.size
        out.phi_neighbor = float(vec[i]); i += 1
        if self.phi_wall is not None:
            out.phi_wall = float(vec[i]); i += 1
        return out


def init_controller(meta: ControllerMeta, rng) -> ControllerParams:
    """Uniform +-1/sqrt(fan_in) weights and biases; repulsion phis start at 1.

    phi = 0 is a stationary point of either gain form (d lam / d phi = 2 phi),
    so gains start at 1 to keep them trainable.
    """
    gen = rng.generator() if hasattr(rng, "generator") else rng
    fan1 = meta.input_dim
    lim1 = 1.0 / np.sqrt(fan1)
    W1 = gen.uniform(-lim1, lim1, size=(meta.hidden, fan1))
    b1 = gen.uniform(-lim1, lim1, size=meta.hidden)
    lim2 = 1.0 / np.sqrt(meta.hidden)
    W2 = gen.uniform(-lim2, lim2, size=(meta.out_dim, meta.hidden))
    b2 = gen.uniform(-lim2, lim2, size=meta.out_dim)
    phi_wall = 1.0 if meta.space == "3d" else None
    return ControllerParams(W1=W1, b1=b1, W2=W2, b2=b2,
                            phi_neighbor=1.0, phi_wall=phi_wall, meta=meta)


# ---------------------------------------------------------------------------
# network forward/backward
# ---------------------------------------------------------------------------


def mlp_forward(p: ControllerParams, y: np.ndarray) -> np.ndarray:
    """Control output W2 tanh(W1 y + b1) + b2 for one flattened Y (or a batch)."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != p.meta.input_dim:
        raise ValueError(f"expected input of length {p.meta.input_dim}, "
                         f"got {y.shape[-1]}")
    h = np.tanh(y @ p.W1.T + p.b1)
    return h @ p.W2.T + p.b2


def _mlp_cached(p: ControllerParams, y: np.ndarray):
    h = np.tanh(y @ p.W1.T + p.b1)
    return h @ p.W2.T + p.b2, h


def _mlp_backward(p: ControllerParams, y: np.ndarray, h: np.ndarray,
                  g_out: np.ndarray):
    """Reverse the network over arbitrary leading batch dims.

    Returns (gW1, gb1, gW2, gb2, g_y).
    """
    flat_h = h.reshape(-1, h.shape[-1])
    flat_g = g_out.reshape(-1, g_out.shape[-1])
    flat_y = y.reshape(-1, y.shape[-1])
    gW2 = flat_g.T @ flat_h
    gb2 = flat_g.sum(axis=0)
    g_h = flat_g @ p.W2
    g_pre = g_h * (1.0 - flat_h * flat_h)
    gW1 = g_pre.T @ flat_y
    gb1 = g_pre.sum(axis=0)
    g_y = (g_pre @ p.W1).reshape(y.shape)
    return gW1, gb1, gW2, gb2, g_y


def controller_gradients(p: ControllerParams, y: np.ndarray, upstream: np.ndarray):
    """Exact reverse-mode gradients of ``mlp_forward``.

    Returns (grads, g_y) where grads maps parameter names to arrays and g_y
    is the gradient with respect to the flattened input (for chaining
    through the state).
    """
    y = np.asarray(y, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape[-1] != p.meta.out_dim:
        raise ValueError("upstream cotangent has wrong output dimension")
    _, h = _mlp_cached(p, y)
    gW1, gb1, gW2, gb2, g_y = _mlp_backward(p, y, h, upstream)
    grads = {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}
    return grads, g_y


# ---------------------------------------------------------------------------
# hybrid fields
# ---------------------------------------------------------------------------


def _flatten_infos(infos) -> np.ndarray:
    if isinstance(infos, np.ndarray):
        arr = infos
    else:
        arr = np.stack([inf.rows for inf in infos])
    return arr.reshape(*arr.shape[:-2], -1)


def field_2d(Zs: np.ndarray, U: np.ndarray, lam: float, d0: float):
    """Hybrid 2D swarm field at a stage state, with cache for the VJP.

    Zs: (..., n, 4); U: (..., n, 2) network accelerations (frozen during a
    step). F = [v, U + repulsion(positions)].
    """
    pos = Zs[..., :2]
    R, cache = closest_neighbor_force(pos, pos, lam, d0)
    F = np.concatenate([Zs[..., 2:4], U + R], axis=-1)
    return F, cache


def field_2d_vjp(cache, cot):
    """Cotangents of ``field_2d`` w.r.t. the stage state, U, and the gain."""
    g_state = np.zeros(cot.shape)
    g_state[..., 2:4] += cot[..., :2]            # d(dr)/dv
    g_U = cot[..., 2:4].copy()
    g_pos, g_src, g_lam = closest_neighbor_force_vjp(cache, cot[..., 2:4])
    g_state[..., :2] += g_pos + g_src            # both sides live in the same state
    return g_state, g_U, g_lam


def hybrid_derivative_2d(Z: SwarmState, infos, p: ControllerParams) -> SwarmState:
    """dr = v; dv = network(Y) + closest-neighbor repulsion."""
    if Z.d != 4:
        raise ValueError("2D hybrid dynamics expect d=4 states")
    y = _flatten_infos(infos)
    U = mlp_forward(p, y)
    F, _ = field_2d(Z.states, U, p.lambda_neighbor(), p.meta.d0_neighbor)
    return SwarmState(F)


def velocity_command_3d(Z_pos: np.ndarray, Z_del_pos: np.ndarray, U: np.ndarray,
                        lam_n: float, lam_w: float, meta: ControllerMeta):
    """Commanded velocities: network output plus neighbor and wall repulsion.

    Neighbor obstacles are each robot's closest *delayed* neighbor (the only
    position information a delayed channel provides); walls use the robot's
    own current position.
    """
    Fn, cache_n = closest_neighbor_force(Z_pos, Z_del_pos, lam_n, meta.d0_neighbor)
    Fw, cache_w = wall_force(Z_pos, meta.cube_half_side, lam_w, meta.d0_wall)
    return U + Fn + Fw, (cache_n, cache_w)


def hybrid_derivative_3d(Z: SwarmState, Z_delayed: SwarmState, infos,
                         p: ControllerParams) -> np.ndarray:
    """Position derivative (n, 3) of the 3D hybrid dynamics.

    The heading block has no derivative of its own; steps derive it from
    this command (see ``predict_rollout``).
    """
    if Z.d != 6:
        raise ValueError("3D hybrid dynamics expect d=6 states")
    y = _flatten_infos(infos)
    U = mlp_forward(p, y)
    v, _ = velocity_command_3d(Z.positions, Z_delayed.positions, U,
                               p.lambda_neighbor(), p.lambda_wall(), p.meta)
    return v


def euler_step_3d(Z: np.ndarray, v: np.ndarray, h: float):
    """Advance positions by h*v and set headings to the motion direction.

    Robots whose command norm is below HEADING_EPS keep their previous
    heading. Returns (next_state, fallback_mask, norms).
    """
    r_next = Z[..., :3] + h * v
    nv = np.linalg.norm(v, axis=-1)
    fallback = nv < HEADING_EPS
    nv_safe = np.where(fallback, 1.0, nv)
    heading = np.where(fallback[..., None], Z[..., 3:6], v / nv_safe[..., None])
    return np.concatenate([r_next, heading], axis=-1), fallback, nv_safe


# ---------------------------------------------------------------------------
# one-step map shared by training and closed-loop prediction
# ---------------------------------------------------------------------------


def one_step_2d(p: ControllerParams, Z: np.ndarray, Y: np.ndarray, h: float,
                with_cache: bool = False):
    """RK4 step of the 2D hybrid field with the info structure frozen.

    Z: (..., n, 4); Y: (..., n, k, 4) built from the step's starting state
    (and, under delay, its delayed snapshot). Neighbor selection inside the
    knowledge term is re-evaluated per stage from the stage state.
    """
    lam = p.lambda_neighbor()
    d0 = p.meta.d0_neighbor
    Yf = _flatten_infos(Y)
    U, hid = _mlp_cached(p, Yf)
    k1, c1 = field_2d(Z, U, lam, d0)
    Z2 = Z + 0.5 * h * k1
    k2, c2 = field_2d(Z2, U, lam, d0)
    Z3 = Z + 0.5 * h * k2
    k3, c3 = field_2d(Z3, U, lam, d0)
    Z4 = Z + h * k3
    k4, c4 = field_2d(Z4, U, lam, d0)
    pred = Z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not with_cache:
        return pred, None
    cache = {"Yf": Yf, "hid": hid, "stage_caches": (c1, c2, c3, c4), "h": h}
    return pred, cache


def one_step_2d_vjp(p: ControllerParams, cache, G: np.ndarray) -> Dict[str, np.ndarray]:
    """Backpropagate a cotangent on the RK4 output to all parameters."""
    h = cache["h"]
    c1, c2, c3, c4 = cache["stage_caches"]
    g_U = np.zeros(G.shape[:-1] + (2,))
    g_lam = 0.0

    gk4 = (h / 6.0) * G
    gZ4, gU4, gl4 = field_2d_vjp(c4, gk4)
    g_U += gU4
    g_lam += gl4
    gk3 = (2.0 * h / 6.0) * G + h * gZ4
    gZ3, gU3, gl3 = field_2d_vjp(c3, gk3)
    g_U += gU3
    g_lam += gl3
    gk2 = (2.0 * h / 6.0) * G + 0.5 * h * gZ3
    gZ2, gU2, gl2 = field_2d_vjp(c2, gk2)
    g_U += gU2
    g_lam += gl2
    gk1 = (h / 6.0) * G + 0.5 * h * gZ2
    _, gU1, gl1 = field_2d_vjp(c1, gk1)
    g_U += gU1
    g_lam += gl1

    gW1, gb1, gW2, gb2, _ = _mlp_backward(p, cache["Yf"], cache["hid"], g_U)
    g_phi = g_lam * gain_derivative(p.meta.gain_form, p.meta.a, p.phi_neighbor)
    return {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2,
            "phi_neighbor": np.array(g_phi)}


def one_step_3d(p: ControllerParams, Z: np.ndarray, Z_del: np.ndarray,
                Y: np.ndarray, h: float, with_cache: bool = False):
    """Euler step of the 3D hybrid dynamics with algebraic heading update."""
    lam_n = p.lambda_neighbor()
    lam_w = p.lambda_wall()
    Yf = _flatten_infos(Y)
    U, hid = _mlp_cached(p, Yf)
    v, (cache_n, cache_w) = velocity_command_3d(
        Z[..., :3], Z_del[..., :3], U, lam_n, lam_w, p.meta)
    pred, fallback, nv_safe = euler_step_3d(Z, v, h)
    if not with_cache:
        return pred, None
    cache = {"Yf": Yf, "hid": hid, "v": v, "fallback": fallback,
             "nv_safe": nv_safe, "cache_n": cache_n, "cache_w": cache_w,
             "heading": pred[..., 3:6], "h": h}
    return pred, cache


def one_step_3d_vjp(p: ControllerParams, cache, G: np.ndarray) -> Dict[str, np.ndarray]:
    """Backpropagate a cotangent on (positions, headings) to all parameters."""
    h = cache["h"]
    v, nv_safe, fallback = cache["v"], cache["nv_safe"], cache["fallback"]
    heading = cache["heading"]
    g_r = G[..., :3]
    g_hd = G[..., 3:6]
    # through heading = v / |v| (zero where the fallback kept the old heading)
    dot = np.einsum("...k,...k->...", heading, g_hd)
    g_v_from_h = (g_hd - heading * dot[..., None]) / nv_safe[..., None]
    g_v_from_h = np.where(fallback[..., None], 0.0, g_v_from_h)
    g_v = h * g_r + g_v_from_h
    g_U = g_v.copy()
    _, _, g_lam_n = closest_neighbor_force_vjp(cache["cache_n"], g_v)
    _, g_lam_w = wall_force_vjp(cache["cache_w"], g_v)
    gW1, gb1, gW2, gb2, _ = _mlp_backward(p, cache["Yf"], cache["hid"], g_U)
    dgain = gain_derivative(p.meta.gain_form, p.meta.a, p.phi_neighbor)
    dgain_w = gain_derivative(p.meta.gain_form, p.meta.a, p.phi_wall)
    return {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2,
            "phi_neighbor": np.array(g_lam_n * dgain),
            "phi_wall": np.array(g_lam_w * dgain_w)}


# ---------------------------------------------------------------------------
# closed-loop prediction
# ---------------------------------------------------------------------------


def predict_rollout(p: ControllerParams, Z0: SwarmState, steps: int, h: float,
                    delay_history: Optional[List[SwarmState]] = None) -> Trajectory:
    """Roll the learnt controller forward from Z0 for ``steps`` steps.

    Info structures are rebuilt from the evolving (and, when tau > 0,
    delayed) predicted states at every step and frozen within the step.
    ``delay_history`` seeds the delay buffer with the tau states preceding
    Z0, oldest first; without it the buffer is padded with copies of Z0.
    """
    meta = p.meta
    if Z0.d != meta.d:
        raise ValueError(f"initial state dimension {Z0.d} does not match "
                         f"controller (d={meta.d})")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    buffer: List[np.ndarray] = []
    if delay_history:
        buffer = [s.states.copy() for s in delay_history]
    while len(buffer) < meta.tau:
        buffer.insert(0, Z0.states.copy())
    out = np.empty((steps + 1, Z0.n, meta.d))
    out[0] = Z0.states
    Z = Z0.states.copy()
    for j in range(steps):
        Z_del = buffer[-meta.tau] if meta.tau > 0 else Z
        Y, _ = infos_from_arrays(Z, Z_del, meta.d_cr, meta.k, meta.pos_dim)
        if meta.space == "2d":
            Z_next, _ = one_step_2d(p, Z, Y, h)
        else:
            Z_next, _ = one_step_3d(p, Z, Z_del, Y, h)
        if not np.isfinite(Z_next).all():
            raise IntegrationFailureError(
                f"non-finite state at prediction step {j}", where=j)
        buffer.append(Z.copy())
        if meta.tau > 0:
            buffer = buffer[-meta.tau:]
        else:
            buffer = []
        Z = Z_next
        out[j + 1] = Z
    return Trajectory(out, dt=h, t0=0.0, space_tag=meta.space)
