"""Experiment configuration schema and its key=value file format.

A config document is plain text, one ``key=value`` per line, with ``#``
comments and blank lines ignored. Unknown keys are errors (they are almost
always typos, and a silently ignored typo can burn hours of compute).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

__all__ = ["ExperimentConfig", "default_2d_config", "default_3d_config",
           "parse_config", "parse_config_file", "emit_config"]


@dataclass
class ExperimentConfig:
    """Everything needed to generate data, train, and evaluate one setup."""

    space: str = "2d"            # {2d, 3d}
    n: int = 10                  # robots per swarm
    d_cr: float = 5.0            # communication radius
    k: int = 6                   # active neighbors, including self
    tau: int = 0                 # information delay in sampling steps
    hidden: int = 128            # hidden units in the controller network
    noise_var: float = 0.001     # stabilization-noise variance on training data
    steps: int = 2000            # 2d: RK4 updates per trajectory; 3d: raw frames
    traj_count: int = 50         # total trajectories
    train_count: int = 30        # leading trajectories used for training
    dt: float = 0.01             # sampling interval
    d0_neighbor: float = 1.0     # collision-avoidance influence threshold
    d0_wall: float = 1.0         # wall-avoidance influence threshold (3d)
    gain_form: str = "offset_square"   # {offset_square, square}
    a: float = 0.5               # gain floor for the offset_square form
    lr: float = 1e-3             # Adam step size
    epochs: int = 200
    batch_size: int = 64         # time indices per mini-batch
    seed: int = 0                # master seed

    def validate(self) -> None:
        if self.space not in ("2d", "3d"):
            raise ConfigError(f"space must be 2d or 3d, got {self.space!r}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.tau < 0:
            raise ConfigError("tau must be nonnegative")
        if self.hidden < 1:
            raise ConfigError("hidden must be positive")
        if self.noise_var < 0:
            raise ConfigError("noise_var must be nonnegative")
        if self.steps < 2:
            raise ConfigError("steps must be >= 2")
        if not (0 < self.train_count < self.traj_count):
            raise ConfigError(
                f"split needs 0 < train_count < traj_count, got "
                f"{self.train_count}/{self.traj_count}")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.d_cr <= 0 or self.d0_neighbor <= 0 or self.d0_wall <= 0:
            raise ConfigError("radii and thresholds must be positive")
        if self.gain_form not in ("offset_square", "square"):
            raise ConfigError(f"unknown gain_form {self.gain_form!r}")
        if self.gain_form == "offset_square" and self.a <= 0:
            raise ConfigError("a must be positive for offset_square gains")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    @property
    def state_dim(self) -> int:
        return 4 if self.space == "2d" else 6

    @property
    def pos_dim(self) -> int:
        return 2 if self.space == "2d" else 3


def default_2d_config() -> ExperimentConfig:
    """Stable-flocking reproduction defaults (50 x 2000-step trajectories)."""
    return ExperimentConfig()


def default_3d_config() -> ExperimentConfig:
    """Boids reproduction defaults (22 x 1700-frame trajectories, delay 1)."""
    return ExperimentConfig(
        space="3d", n=10, d_cr=2.0, k=6, tau=1, noise_var=0.01,
        steps=1700, traj_count=22, train_count=2, dt=0.02,
        gain_form="square",
    )


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_INT_KEYS = {"n", "k", "tau", "hidden", "steps", "traj_count", "train_count",
             "epochs", "batch_size", "seed"}
_FLOAT_KEYS = {"d_cr", "noise_var", "dt", "d0_neighbor", "d0_wall", "a", "lr"}
_STR_KEYS = {"space", "gain_form"}


def parse_config(text: str) -> ExperimentConfig:
    """Parse a key=value document; unknown keys raise with their line number."""
    values = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", line=lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})",
                              line=lineno)
        seen[key] = lineno
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError:
            raise ConfigError(f"cannot parse value {val!r} for key {key!r}",
                              line=lineno) from None
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def parse_config_file(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


def emit_config(cfg: ExperimentConfig) -> str:
    """Serialize with shortest round-trip decimals; parse(emit(x)) == x."""
    lines = []
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name}={v!r}" if isinstance(v, float) else f"{f.name}={v}")
    return "\n".join(lines) + "\n"
