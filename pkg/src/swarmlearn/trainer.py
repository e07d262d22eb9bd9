"""One-step-ahead training of the hybrid controller.

The loss is the mean over time indices of the summed squared state error of
all robots after integrating a single sampling interval forward from each
observed snapshot (teacher forcing: every prediction restarts from data).
Gradients are exact reverse-mode derivatives through the one-step map --
the RK4 step in 2D, the Euler-plus-heading step in 3D -- including the
trainable repulsion gains. Optimization is plain Adam over mini-batches of
time indices, with all robots of an index treated as one batch entry.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import TrainingDivergenceError
from .info_network import infos_from_arrays
from .knode_controller import (
    ControllerMeta,
    ControllerParams,
    init_controller,
    one_step_2d,
    one_step_2d_vjp,
    one_step_3d,
    one_step_3d_vjp,
)
from .sim_core import RngSpec, Trajectory
from .sim_groundtruth import Dataset

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "PairSet",
    "one_step_pairs",
    "collect_pairs",
    "loss",
    "grad",
    "loss_and_grad",
    "train",
    "fd_check",
    "Adam",
    "meta_from_config_dict",
]

# RngSpec stream offsets inside the trainer's seed space
_INIT_STREAM = 0
_EPOCH_STREAM_BASE = 100

# held-out loss is evaluated on at most this many deterministically strided
# pairs per epoch to keep epochs cheap
HOLDOUT_PAIR_CAP = 512


@dataclass
class TrainConfig:
    """Optimization knobs; model structure comes from the experiment config."""

    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    gradient_clip: Optional[float] = None       # global-norm bound, off by default
    dataset_ids: Sequence[int] = ()             # bookkeeping only
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainHistory:
    """Per-epoch curves; list lengths equal the number of epochs completed."""

    epochs: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    holdout_loss: List[float] = field(default_factory=list)
    phi_neighbor: List[float] = field(default_factory=list)
    phi_wall: List[Optional[float]] = field(default_factory=list)
    wall_clock: List[float] = field(default_factory=list)


@dataclass
class PairSet:
    """Aligned (input, delay context, target) snapshots, one row per pair."""

    Z: np.ndarray        # (P, n, d) states at t_j
    Z_del: np.ndarray    # (P, n, d) states at t_j - tau
    target: np.ndarray   # (P, n, d) states at t_{j+1}

    @property
    def count(self) -> int:
        return self.Z.shape[0]

    @property
    def dt_pairs(self):
        return self.Z.shape

    def subset(self, idx) -> "PairSet":
        return PairSet(self.Z[idx], self.Z_del[idx], self.target[idx])

    @staticmethod
    def concatenate(parts: Sequence["PairSet"]) -> "PairSet":
        return PairSet(
            np.concatenate([p.Z for p in parts]),
            np.concatenate([p.Z_del for p in parts]),
            np.concatenate([p.target for p in parts]),
        )


def one_step_pairs(traj: Trajectory, tau: int) -> PairSet:
    """All usable (t_j, t_j - tau, t_{j+1}) triples of one trajectory."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    m = traj.m
    if m < tau + 2:
        raise ValueError(f"trajectory of length {m} has no pairs at tau={tau}")
    s = traj.states
    return PairSet(Z=s[tau : m - 1], Z_del=s[0 : m - 1 - tau], target=s[tau + 1 : m])


def collect_pairs(trajs: Sequence[Trajectory], tau: int) -> PairSet:
    return PairSet.concatenate([one_step_pairs(t, tau) for t in trajs])


def _predict(p: ControllerParams, pairs: PairSet, h: float, with_cache: bool):
    meta = p.meta
    Y, _ = infos_from_arrays(pairs.Z, pairs.Z_del, meta.d_cr, meta.k, meta.pos_dim)
    if meta.space == "2d":
        return one_step_2d(p, pairs.Z, Y, h, with_cache=with_cache)
    return one_step_3d(p, pairs.Z, pairs.Z_del, Y, h, with_cache=with_cache)


def loss(p: ControllerParams, pairs: PairSet, h: float) -> float:
    """Mean over pairs of the robot-summed squared one-step error."""
    if pairs.count == 0:
        raise ValueError("empty batch")
    pred, _ = _predict(p, pairs, h, with_cache=False)
    resid = pred - pairs.target
    return float(np.sum(resid * resid) / pairs.count)


def loss_and_grad(p: ControllerParams, pairs: PairSet, h: float):
    if pairs.count == 0:
        raise ValueError("empty batch")
    pred, cache = _predict(p, pairs, h, with_cache=True)
    resid = pred - pairs.target
    value = float(np.sum(resid * resid) / pairs.count)
    G = (2.0 / pairs.count) * resid
    if p.meta.space == "2d":
        grads = one_step_2d_vjp(p, cache, G)
    else:
        grads = one_step_3d_vjp(p, cache, G)
    return value, grads


def grad(p: ControllerParams, pairs: PairSet, h: float) -> Dict[str, np.ndarray]:
    """Exact gradient of ``loss`` for every parameter, phi included."""
    value, grads = loss_and_grad(p, pairs, h)
    if not np.isfinite(value) or not all(np.isfinite(g).all() for g in grads.values()):
        raise TrainingDivergenceError(f"non-finite loss or gradient (loss={value})")
    return grads


def _grads_to_vector(p: ControllerParams, grads: Dict[str, np.ndarray]) -> np.ndarray:
    parts = [np.asarray(grads[name], dtype=float).ravel() for name in p.param_names()]
    return np.concatenate(parts)


class Adam:
    """Adaptive-moment optimizer over a dict of named parameter arrays."""

    def __init__(self, shapes: Dict[str, tuple], lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k in params:
            g = np.asarray(grads[k], dtype=float)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            params[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


def meta_from_config_dict(cfg: dict) -> ControllerMeta:
    """Controller structure from an experiment-config mapping."""
    return ControllerMeta(
        space=cfg["space"],
        k=cfg["k"],
        d=4 if cfg["space"] == "2d" else 6,
        hidden=cfg["hidden"],
        d_cr=cfg["d_cr"],
        tau=cfg["tau"],
        d0_neighbor=cfg["d0_neighbor"],
        d0_wall=cfg["d0_wall"],
        gain_form=cfg["gain_form"],
        a=cfg["a"],
    )


def _params_as_dict(p: ControllerParams) -> Dict[str, np.ndarray]:
    out = {"W1": p.W1, "b1": p.b1, "W2": p.W2, "b2": p.b2,
           "phi_neighbor": np.array(float(p.phi_neighbor))}
    if p.phi_wall is not None:
        out["phi_wall"] = np.array(float(p.phi_wall))
    return out


def _apply_param_dict(p: ControllerParams, d: Dict[str, np.ndarray]):
    p.W1, p.b1, p.W2, p.b2 = d["W1"], d["b1"], d["W2"], d["b2"]
    p.phi_neighbor = float(d["phi_neighbor"])
    if p.phi_wall is not None:
        p.phi_wall = float(d["phi_wall"])


def _holdout_pairs(dataset: Dataset, tau: int) -> Optional[PairSet]:
    test = dataset.test
    if not test:
        return None
    pairs = collect_pairs(test, tau)
    if pairs.count > HOLDOUT_PAIR_CAP:
        stride = int(np.ceil(pairs.count / HOLDOUT_PAIR_CAP))
        pairs = pairs.subset(np.arange(0, pairs.count, stride))
    return pairs


def train(cfg: TrainConfig, dataset: Dataset,
          meta: Optional[ControllerMeta] = None,
          initial: Optional[ControllerParams] = None,
          epoch_offset: int = 0):
    """Optimize a controller on the dataset's training split.

    Returns (best_params, history) where best is by held-out one-step loss
    (final-epoch parameters when the dataset has no test split). Identical
    (cfg, dataset) reproduce identical histories; epoch permutations are
    keyed by (seed, epoch index) so a resumed run shuffles exactly like an
    uninterrupted one.
    """
    cfg.validate()
    if meta is None:
        meta = meta_from_config_dict(dataset.manifest["config"])
    h = dataset.manifest["config"]["dt"]
    params = initial.copy() if initial is not None else init_controller(
        meta, RngSpec(cfg.seed, _INIT_STREAM))
    train_trajs = dataset.train
    if not train_trajs:
        raise ValueError("dataset has no training trajectories")
    pairs = collect_pairs(train_trajs, meta.tau)
    holdout = _holdout_pairs(dataset, meta.tau)

    pdict = _params_as_dict(params)
    opt = Adam({k: v.shape for k, v in pdict.items()}, lr=cfg.lr,
               beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    history = TrainHistory()
    best = params.copy()
    best_loss = np.inf

    for epoch in range(epoch_offset, epoch_offset + cfg.epochs):
        t_start = time.perf_counter()
        perm = RngSpec(cfg.seed, _EPOCH_STREAM_BASE + epoch).generator().permutation(
            pairs.count)
        epoch_loss = 0.0
        seen = 0
        for start in range(0, pairs.count, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = pairs.subset(idx)
            value, grads = loss_and_grad(params, batch, h)
            if not np.isfinite(value):
                raise TrainingDivergenceError(
                    f"loss became non-finite at epoch {epoch}, batch offset {start}")
            if cfg.gradient_clip is not None:
                gnorm = np.sqrt(sum(float(np.sum(np.square(g)))
                                    for g in grads.values()))
                if gnorm > cfg.gradient_clip:
                    scale = cfg.gradient_clip / gnorm
                    grads = {k: g * scale for k, g in grads.items()}
            if not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingDivergenceError(
                    f"gradient became non-finite at epoch {epoch}")
            pdict = opt.step(pdict, grads)
            _apply_param_dict(params, pdict)
            epoch_loss += value * batch.count
            seen += batch.count
        mean_train = epoch_loss / seen
        if holdout is not None:
            score = loss(params, holdout, h)
        else:
            score = mean_train
        if score < best_loss:
            best_loss = score
            best = params.copy()
        history.epochs.append(epoch)
        history.train_loss.append(mean_train)
        history.holdout_loss.append(score)
        history.phi_neighbor.append(params.phi_neighbor)
        history.phi_wall.append(params.phi_wall)
        history.wall_clock.append(time.perf_counter() - t_start)
    return best, history


def fd_check(p: ControllerParams, pairs: PairSet, h: float, eps: float = 1e-4,
             max_coords: int = 200, rng: Optional[RngSpec] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples up to ``max_coords`` coordinates (phi always included).
    Coordinates where both gradients are below 1e-10 count as exact: they
    are dead directions whose finite differences are pure rounding noise.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    analytic = _grads_to_vector(p, grad(p, pairs, h))
    theta = p.to_vector()
    total = theta.size
    n_phi = 1 if p.phi_wall is None else 2
    if total <= max_coords:
        coords = np.arange(total)
    else:
        gen = (rng or RngSpec(0, 7)).generator()
        coords = gen.choice(total - n_phi, size=max_coords - n_phi, replace=False)
        coords = np.concatenate([coords, np.arange(total - n_phi, total)])
    worst = 0.0
    for c in coords:
        step = eps * max(1.0, abs(theta[c]))
        tp = theta.copy(); tp[c] += step
        tm = theta.copy(); tm[c] -= step
        fd = (loss(p.from_vector(tp), pairs, h)
              - loss(p.from_vector(tm), pairs, h)) / (2 * step)
        an = analytic[c]
        if abs(fd) < 1e-10 and abs(an) < 1e-10:
            continue
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
    return worst
