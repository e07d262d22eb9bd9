"""Persistent file formats: trajectories, checkpoints, manifests, histories.

All formats are line-oriented text with floats serialized as shortest
round-trip decimals, so parse(emit(x)) == x bit for bit and files diff
cleanly across runs and machines.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import FormatError
from .knode_controller import ControllerMeta, ControllerParams
from .sim_core import Trajectory
from .sim_groundtruth import Dataset
from .trainer import TrainHistory

__all__ = [
    "emit_trajectory",
    "parse_trajectory",
    "save_trajectory",
    "load_trajectory",
    "emit_checkpoint",
    "parse_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "save_dataset",
    "load_dataset",
    "save_history_csv",
    "load_history_csv",
]

TRAJ_MAGIC = "# swarmlearn-traj v1"
CKPT_MAGIC = "# swarmlearn-ckpt v1"


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# trajectory CSV
# ---------------------------------------------------------------------------


def emit_trajectory(traj: Trajectory) -> str:
    lines = [
        TRAJ_MAGIC,
        f"# n={traj.n} d={traj.d} dt={_fmt(traj.dt)} space={traj.space_tag} "
        f"t0={_fmt(traj.t0)}",
        "step,robot," + ",".join(f"c{i}" for i in range(traj.d)),
    ]
    for step in range(traj.m):
        for robot in range(traj.n):
            row = traj.states[step, robot]
            lines.append(f"{step},{robot}," + ",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_trajectory(text: str) -> Trajectory:
    lines = text.splitlines()
    if len(lines) < 4 or lines[0] != TRAJ_MAGIC:
        raise FormatError("not a swarmlearn trajectory file")
    header: Dict[str, str] = {}
    for part in lines[1].lstrip("# ").split():
        key, _, val = part.partition("=")
        header[key] = val
    try:
        n, d = int(header["n"]), int(header["d"])
        dt, t0 = float(header["dt"]), float(header["t0"])
        space = header["space"]
    except (KeyError, ValueError) as e:
        raise FormatError(f"bad trajectory header: {e}") from e
    rows = lines[3:]
    if len(rows) % n != 0:
        raise FormatError("row count is not a multiple of n")
    m = len(rows) // n
    states = np.empty((m, n, d))
    for idx, row in enumerate(rows):
        parts = row.split(",")
        if len(parts) != d + 2:
            raise FormatError(f"bad column count on data row {idx}")
        step, robot = int(parts[0]), int(parts[1])
        states[step, robot] = [float(v) for v in parts[2:]]
    return Trajectory(states, dt=dt, t0=t0, space_tag=space)


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(emit_trajectory(traj))


def load_trajectory(path) -> Trajectory:
    return parse_trajectory(Path(path).read_text())


# ---------------------------------------------------------------------------
# controller checkpoint
# ---------------------------------------------------------------------------

_META_INT = {"k", "d", "hidden", "tau"}
_META_FLOAT = {"d_cr", "d0_neighbor", "d0_wall", "a", "cube_half_side"}


def emit_checkpoint(params: ControllerParams, epochs_completed: int = 0) -> str:
    meta = params.meta
    lines = [CKPT_MAGIC, "[meta]"]
    for key, val in asdict(meta).items():
        lines.append(f"{key}={_fmt(val) if isinstance(val, float) else val}")
    lines.append(f"epochs_completed={epochs_completed}")
    lines.append("[weights]")
    for name in ("W1", "b1", "W2", "b2"):
        arr = getattr(params, name)
        lines.append(f"{name}=" + " ".join(_fmt(v) for v in arr.ravel()))
    lines.append("[gains]")
    lines.append(f"phi_neighbor={_fmt(params.phi_neighbor)}")
    if params.phi_wall is not None:
        lines.append(f"phi_wall={_fmt(params.phi_wall)}")
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str):
    """Returns (ControllerParams, epochs_completed)."""
    lines = text.splitlines()
    if not lines or lines[0] != CKPT_MAGIC:
        raise FormatError("not a swarmlearn checkpoint file")
    section = None
    meta_raw: Dict[str, str] = {}
    arrays: Dict[str, np.ndarray] = {}
    gains: Dict[str, float] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("["):
            section = line.strip("[]")
            continue
        key, _, val = line.partition("=")
        if section == "meta":
            meta_raw[key] = val
        elif section == "weights":
            arrays[key] = np.array([float(v) for v in val.split()]) if val else \
                np.empty(0)
        elif section == "gains":
            gains[key] = float(val)
        else:
            raise FormatError(f"unexpected line outside any section: {line!r}")
    try:
        epochs_completed = int(meta_raw.pop("epochs_completed", "0"))
        kwargs = {}
        for key, val in meta_raw.items():
            if key in _META_INT:
                kwargs[key] = int(val)
            elif key in _META_FLOAT:
                kwargs[key] = float(val)
            else:
                kwargs[key] = val
        meta = ControllerMeta(**kwargs)
        hidden, inp, out = meta.hidden, meta.input_dim, meta.out_dim
        params = ControllerParams(
            W1=arrays["W1"].reshape(hidden, inp),
            b1=arrays["b1"].reshape(hidden),
            W2=arrays["W2"].reshape(out, hidden),
            b2=arrays["b2"].reshape(out),
            phi_neighbor=gains["phi_neighbor"],
            phi_wall=gains.get("phi_wall"),
            meta=meta,
        )
    except (KeyError, ValueError, TypeError) as e:
        raise FormatError(f"bad checkpoint contents: {e}") from e
    if meta.space == "3d" and params.phi_wall is None:
        raise FormatError("3D checkpoint is missing phi_wall")
    return params, epochs_completed


def save_checkpoint(params: ControllerParams, path, epochs_completed: int = 0) -> None:
    Path(path).write_text(emit_checkpoint(params, epochs_completed))


def load_checkpoint(path):
    return parse_checkpoint(Path(path).read_text())


# ---------------------------------------------------------------------------
# dataset directory (trajectory files + JSON manifest)
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    manifest = json.loads(json.dumps(dataset.manifest))  # deep copy
    for traj, rec in zip(dataset.trajectories, manifest["trajectories"]):
        name = f"traj_{rec['index']:03d}.csv"
        save_trajectory(traj, out / name)
        rec["file"] = name
        written.append(out / name)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(out / "manifest.json")
    return written


def load_dataset(data_dir) -> Dataset:
    data = Path(data_dir)
    manifest_path = data / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"missing manifest: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    trajs = []
    for rec in manifest["trajectories"]:
        try:
            trajs.append(load_trajectory(data / rec["file"]))
        except (KeyError, OSError) as e:
            raise FormatError(f"manifest names unreadable trajectory: {e}") from e
    return Dataset(trajectories=trajs, manifest=manifest)


# ---------------------------------------------------------------------------
# training history CSV
# ---------------------------------------------------------------------------


def save_history_csv(history: TrainHistory, path) -> None:
    lines = ["epoch,train_loss,holdout_loss,phi_neighbor,phi_wall,wall_clock"]
    for i, epoch in enumerate(history.epochs):
        wall = history.phi_wall[i]
        lines.append(",".join([
            str(epoch),
            _fmt(history.train_loss[i]),
            _fmt(history.holdout_loss[i]),
            _fmt(history.phi_neighbor[i]),
            "" if wall is None else _fmt(wall),
            _fmt(history.wall_clock[i]),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_history_csv(path) -> TrainHistory:
    lines = Path(path).read_text().splitlines()
    hist = TrainHistory()
    for line in lines[1:]:
        if not line.strip():
            continue
        epoch, tr, ho, phi_n, phi_w, wall = line.split(",")
        hist.epochs.append(int(epoch))
        hist.train_loss.append(float(tr))
        hist.holdout_loss.append(float(ho))
        hist.phi_neighbor.append(float(phi_n))
        hist.phi_wall.append(float(phi_w) if phi_w else None)
        hist.wall_clock.append(float(wall))
    return hist
