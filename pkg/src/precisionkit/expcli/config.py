"""Experiment settings, config-file parsing and the effective-config header."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .. import __version__
from ..errors import ConfigError

EXPERIMENTS = ("fig2_embedding", "fig3_sysid", "fig4_explore", "fig5_noise", "ipp_mission", "ipp_fp")
ALIASES = {"fig2": "fig2_embedding", "fig3": "fig3_sysid", "fig4": "fig4_explore", "fig5": "fig5_noise",
           "ipp": "ipp_mission"}
RESERVED = ("experiment", "seeds", "out", "workers")


@dataclass(frozen=True)
class BenchmarkSettings:
    mass: float = 1.4
    stiffness: float = 0.8
    damping: float = 0.4
    dt: float = 0.1
    duration: float = 32.0
    kernel_width: float = 0.5
    sigma_z: float = 0.1
    sigma_w: float = 0.05
    order: int = 6
    input_order: int = 2
    input_prior_precision: float = 1e4


@dataclass(frozen=True)
class Fig2Settings(BenchmarkSettings):
    sigma_z: float = 0.01
    sigma_w: float = 0.005
    input_prior_precision: float = 1.0
    orders: tuple = (1, 2, 3, 4, 5, 6)


@dataclass(frozen=True)
class LearningSettings(BenchmarkSettings):
    max_iter: int = 200
    tol: float = 1e-6


@dataclass(frozen=True)
class Fig3Settings(LearningSettings):
    sigma_z: float = 0.01
    sigma_w: float = 0.005
    prior_precision: float = 1.0


@dataclass(frozen=True)
class Fig4Settings(LearningSettings):
    prior_grid: tuple = (1e-1, 1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6)


@dataclass(frozen=True)
class Fig5Settings(LearningSettings):
    sigma_z_grid: tuple = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0)
    over_exposed_precision: float = 1.0
    biased_precision: float = 1e6
    biased_offset: float = 0.1


@dataclass(frozen=True)
class IppSettings:
    width: int = 40
    height: int = 40
    cell_size: float = 1.0
    n_targets: int = 7
    no_fly: tuple | None = (16, 24, 16, 24)
    prior_mean: float = 0.5
    prior_variance: float = 0.25
    start_level: int = 2
    speed: float = 5.0
    capture_time: float = 0.1
    spurious_count: int = 0
    footprint_radius: tuple = (2.0, 4.0, 6.0)
    measurement_variance: tuple = (0.05, 0.10, 0.15)
    level_height: tuple = (5.0, 10.0, 15.0)
    false_positive_rate: float = 0.05
    false_negative_rate: float = 0.05
    horizon: int = 5
    lattice_spacing: int = 2
    max_leg: float = math.inf
    scheduler_mode: str = "cycles"
    precision_base: float = 1.0
    precision_amplitude: float = 1.0
    precision_frequency: float = 4.0
    precision_threshold: float = 1.0
    ticks_per_period: int = 40
    variance_threshold: float = 0.005
    budget: float = 5000.0
    max_time: float = math.inf
    snapshot_every: int = 10


@dataclass(frozen=True)
class IppFpSettings(IppSettings):
    spurious_count: int = 1


SETTINGS = {
    "fig2_embedding": (Fig2Settings, range(20)),
    "fig3_sysid": (Fig3Settings, range(20)),
    "fig4_explore": (Fig4Settings, range(8)),
    "fig5_noise": (Fig5Settings, range(4)),
    "ipp_mission": (IppSettings, range(50)),
    "ipp_fp": (IppFpSettings, range(50)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seeds: tuple
    settings: object
    out: Path
    workers: int = 1
    source: str = field(default="defaults", compare=False)

    def header_lines(self) -> list:
        """``key=value`` lines describing everything that affects the numbers."""
        lines = [f"package_version={__version__}", f"experiment={self.experiment}",
                 f"seeds={format_value(self.seeds)}"]
        for f in sorted(dataclasses.fields(self.settings), key=lambda f: f.name):
            lines.append(f"{f.name}={format_value(getattr(self.settings, f.name))}")
        return lines


def resolve_experiment(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment id {name!r}; choose from {', '.join(EXPERIMENTS)}")
    return name


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def _coerce(name, value, default):
    """Cast a parsed config value to the type of its default."""
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
        if isinstance(default, tuple) or default is None:
            if value is None:
                return None
            if not isinstance(value, (list, tuple)):
                raise TypeError
            kind = type(default[0]) if default else float
            return tuple(kind(x) for x in value)
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"setting {name!r} has invalid value {value!r}")


def _read_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping of settings")
    return data


def load_config(experiment: str, path=None, seed=None, out=None, workers=None, overrides=None) -> ExperimentConfig:
    """Effective configuration: defaults, then the config file, then explicit arguments.

    Unknown keys are rejected.
    """
    experiment = resolve_experiment(experiment)
    data = _read_file(path) if path is not None else {}
    if overrides:
        data = {**data, **overrides}
    if "experiment" in data and resolve_experiment(str(data["experiment"])) != experiment:
        raise ConfigError(f"config is for {data['experiment']!r}, not {experiment!r}")
    cls, default_seeds = SETTINGS[experiment]
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known) - set(RESERVED))
    if unknown:
        raise ConfigError(f"unknown config keys for {experiment}: {', '.join(unknown)}")
    defaults = cls()
    values = {k: _coerce(k, v, getattr(defaults, k)) for k, v in data.items() if k in known}
    try:
        settings = cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    seeds = tuple(default_seeds)
    if "seeds" in data:
        raw = data["seeds"]
        raw = [raw] if isinstance(raw, int) else raw
        if not isinstance(raw, (list, tuple)) or not raw or not all(isinstance(s, int) and s >= 0 for s in raw):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        seeds = tuple(raw)
    if seed is not None:
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        seeds = (int(seed),)
    seeds = tuple(sorted(set(seeds)))
    out = Path(out if out is not None else data.get("out", Path("results") / experiment))
    workers = int(workers if workers is not None else data.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    return ExperimentConfig(experiment, seeds, settings, out, workers, source=str(path) if path else "defaults")
