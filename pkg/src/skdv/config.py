"""Plain-text experiment configuration: `key = value` lines with units in
the key names.  Unknown keys are errors (fail-closed); the canonical
serialization is hashed into every output artifact."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .integrator import NoiseSpec, SimParams
from .noise import ForcingSpec
from .spectral import Field, Grid
from .profiles import gaussian_bump, soliton

__all__ = ["ExperimentConfig", "ConfigError", "parse_config"]

KINDS = ("conservation", "linear-exact", "moment-suite", "kb-suite",
         "feller-suite", "custom")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "custom"
    grid_length: float = 100.0
    grid_modes: int = 1024
    lambda_per_time: float = 0.5
    dt_time: float = 1e-3
    t_end_time: float = 10.0
    seed: int = 0
    dealias: bool = True
    nonlinear: bool = True
    checkpoint_every_steps: int = 0
    blowup_ceiling: float = 1e6

    noise_hs_amplitude: float = 0.0
    noise_decay_exponent: float = 4.0
    noise_cutoff_mode: int = -1          # -1 disables the hard cutoff

    forcing_shape: str = "zero"
    forcing_amplitude: float = 0.0
    forcing_width_space: float = 5.0
    forcing_cutoff_mode: int = 8

    initial_shape: str = "zero"          # zero | soliton | gaussian-bump
    initial_speed: float = 1.0
    initial_amplitude: float = 1.0
    initial_width_space: float = 5.0
    initial_center_space: float = 0.0

    trajectories: int = 200
    observe_stride_time: float = 0.25

    kb_horizon_time: float = 2000.0
    kb_stride_time: float = 1.0
    kb_replicas: int = 10

    feller_gap_h1: float = 1e-3
    feller_replicas: int = 50
    feller_horizon_time: float = 1.0

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.dt_time <= 0:
            raise ConfigError("dt_time must be positive")
        if self.t_end_time < 0:
            raise ConfigError("t_end_time must be nonnegative")
        if self.lambda_per_time < 0:
            raise ConfigError("lambda_per_time must be nonnegative")
        if self.grid_modes < 8 or self.grid_modes % 2:
            raise ConfigError("grid_modes must be an even integer >= 8")
        if self.grid_length <= 0:
            raise ConfigError("grid_length must be positive")
        if self.trajectories < 1:
            raise ConfigError("trajectories must be >= 1")
        if self.noise_hs_amplitude < 0:
            raise ConfigError("noise_hs_amplitude must be nonnegative")
        if self.kb_stride_time > self.kb_horizon_time:
            raise ConfigError("kb_stride_time exceeds kb_horizon_time")

    def grid(self) -> Grid:
        return Grid(self.grid_length, self.grid_modes)

    def sim_params(self) -> SimParams:
        cutoff = None if self.noise_cutoff_mode < 0 else self.noise_cutoff_mode
        return SimParams(
            grid=self.grid(),
            lam=self.lambda_per_time,
            dt=self.dt_time,
            t_end=self.t_end_time,
            forcing=ForcingSpec(shape=self.forcing_shape,
                                amplitude=self.forcing_amplitude,
                                width=self.forcing_width_space,
                                cutoff=self.forcing_cutoff_mode,
                                seed=self.seed),
            noise=NoiseSpec(hs_amplitude=self.noise_hs_amplitude,
                            decay=self.noise_decay_exponent,
                            cutoff=cutoff),
            dealias=self.dealias,
            nonlinear=self.nonlinear,
            seed=self.seed,
            checkpoint_every=self.checkpoint_every_steps,
            blowup_ceiling=self.blowup_ceiling,
        )

    def initial_field(self) -> Field:
        grid = self.grid()
        if self.initial_shape == "zero":
            return Field.zero(grid)
        if self.initial_shape == "soliton":
            return soliton(grid, self.initial_speed, self.initial_center_space)
        if self.initial_shape == "gaussian-bump":
            return gaussian_bump(grid, self.initial_amplitude,
                                 self.initial_width_space, self.initial_center_space)
        raise ConfigError(f"unknown initial_shape {self.initial_shape!r}")

    def canonical_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "on" if value else "off"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)


def _coerce(name: str, raw: str, target_type):
    raw = raw.strip()
    if target_type is bool:
        if raw in ("on", "true", "1", "yes"):
            return True
        if raw in ("off", "false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected on/off, got {raw!r}")
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    return raw


def parse_config(path) -> ExperimentConfig:
    """Read a key=value config file; unknown keys and bad values are errors."""
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    type_map = {f.name: type(getattr(ExperimentConfig(), f.name))
                for f in fields(ExperimentConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = _coerce(key, raw, type_map[key])
    config = ExperimentConfig(**values)
    config.validate()
    return config
