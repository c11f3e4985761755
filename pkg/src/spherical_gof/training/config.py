"""Training configuration, its TOML form, and the loss schedule."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..losses import LossWeights, ScheduleState

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class LearningRates:
    means: float = 1.6e-4  # times scene extent, decays to means_final
    means_final: float = 1.6e-6
    quats: float = 1e-3
    log_scales: float = 5e-3
    opacity_logits: float = 0.05
    sh_dc: float = 2.5e-3
    sh_rest: float = 2.5e-3 / 20.0


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 8000
    densify_from: int = 500
    densify_until: int = 4000
    densify_interval: int = 100
    grad_threshold: float = 2e-4
    size_fraction: float = 0.01
    min_opacity: float = 0.005
    max_gaussians: int = 200_000
    jump_ramp: tuple = (1000, 4000)
    dn_start: int = 5000
    kappa: float = 0.5
    init_opacity: float = 0.1
    sh_degree: int = 0
    tile_size: int = 16
    seed: int = 0
    checkpoint_interval: int = 0  # 0 = only the final checkpoint
    lr: LearningRates = field(default_factory=LearningRates)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        if self.densify_until > self.iterations:
            raise ConfigError(f"densify_until ({self.densify_until}) exceeds iterations ({self.iterations})")
        if self.densify_interval < 1:
            raise ConfigError("densify_interval must be positive")
        for f in fields(self.lr):
            if getattr(self.lr, f.name) <= 0:
                raise ConfigError(f"learning rate {f.name} must be positive")
        lo, hi = self.jump_ramp
        if not 0 <= lo <= hi:
            raise ConfigError("jump_ramp must satisfy 0 <= start <= end")
        if not 0.0 < self.init_opacity < 1.0:
            raise ConfigError("init_opacity must lie in (0, 1)")
        if self.sh_degree not in (0, 1, 2, 3):
            raise ConfigError("sh_degree must be 0..3")

    def scaled(self, iterations: int) -> "TrainConfig":
        """Same schedule compressed or stretched to ``iterations``."""
        if self.iterations == 0:
            return replace(self, iterations=iterations)
        k = iterations / self.iterations

        def s(x):
            return int(round(x * k))

        return replace(
            self, iterations=iterations, densify_from=s(self.densify_from),
            densify_until=min(s(self.densify_until), iterations),
            jump_ramp=(s(self.jump_ramp[0]), s(self.jump_ramp[1])), dn_start=s(self.dn_start),
        )

    def schedule(self, it: int) -> ScheduleState:
        """Jump losses ramp linearly over ``jump_ramp``; dn switches on at ``dn_start``."""
        lo, hi = self.jump_ramp
        if it < lo:
            jump = 0.0
        elif it >= hi:
            jump = 1.0
        else:
            jump = (it - lo) / (hi - lo)
        return ScheduleState(jump=jump, dn=1.0 if it >= self.dn_start else 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["jump_ramp"] = list(self.jump_ramp)
        return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        if "lr" in d:
            d["lr"] = LearningRates(**d["lr"])
        if "loss" in d:
            d["loss"] = LossWeights(**d["loss"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if "jump_ramp" in d:
        d["jump_ramp"] = tuple(d["jump_ramp"])
    return TrainConfig(**d)


def load_config(path) -> TrainConfig:
    """Read a TOML file; top-level keys mirror TrainConfig, with [lr] and [loss] tables."""
    try:
        data = tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)
