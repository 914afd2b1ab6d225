"""Simulation configuration: dataclasses, unit parsing and YAML loading.

All values are stored in SI units (W, Hz, cycles/s, bits, s, m). The config
file may carry unit strings such as ``"100 mW"`` or ``"0.5 GHz"``; they are
converted once at load time.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

log = logging.getLogger(__name__)

CONFIG_VERSION = 1

SCHEMES = ("joint", "no-compute-alloc", "no-radio-alloc", "random-feasible", "greedy-drift")


class ConfigError(ValueError):
    """Raised for malformed, unknown or out-of-range configuration entries."""


# unit -> (dimension, SI multiplier)
_UNITS = {
    "w": ("power", 1.0),
    "mw": ("power", 1e-3),
    "uw": ("power", 1e-6),
    "hz": ("frequency", 1.0),
    "khz": ("frequency", 1e3),
    "mhz": ("frequency", 1e6),
    "ghz": ("frequency", 1e9),
    "s": ("time", 1.0),
    "ms": ("time", 1e-3),
    "us": ("time", 1e-6),
    "m": ("length", 1.0),
    "km": ("length", 1e3),
    "bit": ("data", 1.0),
    "bits": ("data", 1.0),
    "kbit": ("data", 1e3),
    "mbit": ("data", 1e6),
    "j": ("energy", 1.0),
    "mj": ("energy", 1e-3),
}

_QUANTITY_RE = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-z]+)?\s*$")


def parse_quantity(value: Any, dimension: str | None, name: str) -> float:
    """Convert a number or a ``"<number> <unit>"`` string to SI."""
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name}: expected a number or quantity string, got {value!r}")
    m = _QUANTITY_RE.match(value)
    if m is None:
        raise ConfigError(f"{name}: cannot parse quantity {value!r}")
    try:
        number = float(m.group(1))
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse quantity {value!r}") from exc
    unit = m.group(2)
    if unit is None:
        return number
    key = unit.lower()
    # "mW" vs "MW" ambiguity does not arise in practice: megawatts are rejected
    if unit == "MW" or key not in _UNITS:
        raise ConfigError(f"{name}: unknown unit {unit!r}")
    dim, scale = _UNITS[key]
    if dimension is not None and dim != dimension:
        raise ConfigError(f"{name}: unit {unit!r} is {dim}, expected {dimension}")
    return number * scale


@dataclass
class NetConfig:
    n_devices: int = 20
    n_sbs: int = 3
    region: tuple[float, float] = (1000.0, 1000.0)
    sbs_layout: str = "ring"  # ring | random | explicit
    sbs_positions: list[tuple[float, float]] | None = None
    ring_radius: float = 350.0
    sbs_radius: float = 150.0
    p_max: float = 0.1
    f_local: float = 0.5e9
    f_sbs: float = 10e9
    f_mbs: float = 50e9
    bw_mbs: float = 10e6
    bw_sbs: float = 5e6
    path_loss_exp: float = 3.0
    noise_power: float = 1e-14
    min_distance: float = 1.0
    mobility_step: float = 0.0


@dataclass
class EnergyConfig:
    switched_cap: float = 1e-27
    cycles_per_bit: float = 100.0
    slot_len: float = 0.1
    edge_energy_coeff: float = 1.0


@dataclass
class ArrivalConfig:
    mean_rate: float = 1e6
    distribution: str = "poisson"  # poisson | uniform
    unit_bits: float = 1e4


@dataclass
class LyapunovConfig:
    v_weight: float = 1e3
    penalty: float = -1e6


@dataclass
class TrainConfig:
    discount: float = 0.99
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    t_max: int = 20
    episodes: int = 3000
    episode_len: int = 200
    workers: int = 1
    entropy_coeff: float = 0.01
    grad_clip: float = 40.0
    hidden: tuple[int, ...] = (128, 128, 128)
    init_log_std: float = 0.5
    reward_scale: float | None = None


@dataclass
class SimConfig:
    network: NetConfig = field(default_factory=NetConfig)
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    arrivals: ArrivalConfig = field(default_factory=ArrivalConfig)
    lyapunov: LyapunovConfig = field(default_factory=LyapunovConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    scheme: str = "joint"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])

    def replace(self, **sections: Any) -> "SimConfig":
        """Copy with nested overrides, e.g. ``cfg.replace(network={"n_devices": 10})``."""
        out = dataclasses.replace(self)
        for key, val in sections.items():
            if isinstance(val, dict):
                setattr(out, key, dataclasses.replace(getattr(self, key), **val))
            else:
                setattr(out, key, val)
        validate(out)
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# field name -> expected dimension for unit strings
_DIMENSIONS = {
    "p_max": "power",
    "noise_power": "power",
    "f_local": "frequency",
    "f_sbs": "frequency",
    "f_mbs": "frequency",
    "bw_mbs": "frequency",
    "bw_sbs": "frequency",
    "ring_radius": "length",
    "sbs_radius": "length",
    "min_distance": "length",
    "mobility_step": "length",
    "slot_len": "time",
    "mean_rate": "data",
    "unit_bits": "data",
    "edge_energy_coeff": "power",
}

_POSITIVE = {
    "network": ["ring_radius", "sbs_radius", "p_max", "f_local", "f_sbs", "f_mbs",
                "bw_mbs", "bw_sbs", "path_loss_exp", "noise_power", "min_distance"],
    "energy": ["switched_cap", "cycles_per_bit", "slot_len", "edge_energy_coeff"],
    "arrivals": ["unit_bits"],
    "lyapunov": [],
    "training": ["t_max", "episodes", "episode_len", "workers"],
}


def _build_section(cls, raw: dict, section: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in names:
            raise ConfigError(f"{section}.{key}: unknown key")
        full = f"{section}.{key}"
        if key in _DIMENSIONS:
            value = parse_quantity(value, _DIMENSIONS[key], full)
        elif key in ("region",):
            value = tuple(parse_quantity(v, "length", full) for v in value)
        elif key == "hidden":
            value = tuple(int(v) for v in value)
        elif key == "sbs_positions" and value is not None:
            value = [tuple(parse_quantity(c, "length", full) for c in p) for p in value]
        kwargs[key] = value
    return cls(**kwargs)


def validate(cfg: SimConfig) -> None:
    net = cfg.network
    if int(net.n_devices) < 1:
        raise ConfigError("network.n_devices: must be >= 1")
    if int(net.n_sbs) < 0:
        raise ConfigError("network.n_sbs: must be >= 0")
    if len(net.region) != 2 or min(net.region) <= 0:
        raise ConfigError("network.region: both sides must be positive")
    if net.sbs_layout not in ("ring", "random", "explicit"):
        raise ConfigError(f"network.sbs_layout: unknown layout {net.sbs_layout!r}")
    if net.sbs_layout == "explicit":
        if net.sbs_positions is None or len(net.sbs_positions) != net.n_sbs:
            raise ConfigError("network.sbs_positions: need one position per SBS")
    if net.mobility_step < 0:
        raise ConfigError("network.mobility_step: must be >= 0")
    for section, keys in _POSITIVE.items():
        obj = getattr(cfg, section)
        for key in keys:
            val = getattr(obj, key)
            if not (val > 0) or not math.isfinite(val):
                raise ConfigError(f"{section}.{key}: must be positive, got {val!r}")
    if cfg.arrivals.mean_rate < 0:
        raise ConfigError("arrivals.mean_rate: must be >= 0")
    if cfg.arrivals.distribution not in ("poisson", "uniform"):
        raise ConfigError(f"arrivals.distribution: unknown {cfg.arrivals.distribution!r}")
    if cfg.lyapunov.v_weight < 0:
        raise ConfigError("lyapunov.v_weight: must be >= 0")
    if cfg.lyapunov.penalty >= 0:
        raise ConfigError("lyapunov.penalty: must be negative")
    tr = cfg.training
    if not 0.0 <= tr.discount <= 1.0:
        raise ConfigError("training.discount: must lie in [0, 1]")
    if tr.lr_actor < 0 or tr.lr_critic < 0:
        raise ConfigError("training.lr_*: must be >= 0")
    if tr.reward_scale is not None and tr.reward_scale <= 0:
        raise ConfigError("training.reward_scale: must be positive")
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"scheme: unknown scheme {cfg.scheme!r}")


_SECTIONS = {
    "network": NetConfig,
    "energy": EnergyConfig,
    "arrivals": ArrivalConfig,
    "lyapunov": LyapunovConfig,
    "training": TrainConfig,
}


def config_from_dict(raw: dict) -> SimConfig:
    raw = dict(raw or {})
    version = raw.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported config version {version!r}")
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value or {}, key)
        elif key == "scheme":
            kwargs[key] = str(value)
        elif key == "seeds":
            kwargs[key] = [int(s) for s in value]
        else:
            raise ConfigError(f"{key}: unknown key")
    cfg = SimConfig(**kwargs)
    validate(cfg)
    return cfg


def defaulted_fields(raw: dict | None) -> dict[str, Any]:
    """Dotted names and values of every field the file left to its default."""
    raw = raw or {}
    base = SimConfig()
    out: dict[str, Any] = {}
    for section in _SECTIONS:
        given = raw.get(section) or {}
        for f in dataclasses.fields(getattr(base, section)):
            if f.name not in given:
                out[f"{section}.{f.name}"] = getattr(getattr(base, section), f.name)
    for key in ("scheme", "seeds"):
        if key not in raw:
            out[key] = getattr(base, key)
    return out


def load_config(path: str | Path, echo: bool = True) -> SimConfig:
    """Read a YAML config file, convert units, validate and fill defaults.

    Defaulted fields are logged at INFO, followed by the full effective config.
    """
    path = Path(path)
    try:
        with path.open() as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = config_from_dict(raw)
    if echo:
        defaults = defaulted_fields(raw)
        if defaults:
            log.info("defaults applied: %s",
                     ", ".join(f"{k}={v!r}" for k, v in defaults.items()))
        log.info("effective config:\n%s", dump_config(cfg))
    return cfg


def dump_config(cfg: SimConfig) -> str:
    data = {"version": CONFIG_VERSION}
    data.update(json.loads(json.dumps(cfg.to_dict(), default=list)))
    return yaml.safe_dump(data, sort_keys=False)


def reference_config() -> SimConfig:
    """Defaults matching the evaluation setup: N=20, M=3, 100 mW, 10/5 MHz."""
    cfg = SimConfig()
    validate(cfg)
    return cfg
