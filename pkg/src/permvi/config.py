"""Flat experiment configuration: JSON file plus command-line overrides."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import ParseError, ValidationError

EXPERIMENTS = ("matching", "lds", "categorical-limit", "transform-diagnostics")
TRANSFORM_CHOICES = ("stick-breaking", "rounding", "gumbel-softmax")


@dataclass
class ExperimentConfig:
    experiment: str = "matching"
    transforms: list = field(default_factory=lambda: ["stick-breaking", "rounding"])
    seed: int = 0
    repetitions: int = 50
    out: Optional[str] = None
    # matching
    n: int = 6
    sigmas: list = field(default_factory=lambda: [0.1, 0.25, 0.5, 0.75])
    center_scale: float = 3.5
    dim: int = 2
    eta: float = 0.5
    eval_samples: int = 2000
    mallows_thetas: list = field(default_factory=lambda: [0.1, 0.5, 2.0, 5.0, 10.0])
    mallows_steps: int = 20000
    metrics: list = field(default_factory=lambda: ["bd"])
    # variational fit
    steps: int = 120
    samples: int = 10
    lr: float = 0.1
    tau0: float = 1.0
    decay: float = 0.99
    tau_min_rounding: float = 0.5
    tau_min_stick: float = 0.3
    v_init: float = 0.3
    v_min: float = 0.1
    v_max: float = 0.5
    nu_init: float = 1.0
    nu_min: float = 1e-8
    nu_max: float = 1.0
    sinkhorn_iters: int = 10
    # lds
    lds_n: int = 30
    worms: list = field(default_factory=lambda: [1, 5])
    T: int = 300
    density: float = 0.2
    noise_std: float = 1.0
    tols: list = field(default_factory=lambda: [0.0075, 0.01, 0.02, 0.04, 0.05])
    num_known: int = 3
    lds_methods: list = field(default_factory=lambda: ["rounding", "naive", "map", "mcmc"])
    outer_iters: int = 15
    inner_steps: int = 20
    lds_tau_min: float = 0.5
    mcmc_sweeps: int = 300
    adjacency_path: Optional[str] = None
    positions_path: Optional[str] = None
    constraints_path: Optional[str] = None
    # categorical limit
    categories: int = 4
    limit_taus: list = field(default_factory=lambda: [1.0, 0.3, 0.1, 1e-3])
    limit_samples: int = 100_000

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValidationError(f"{name}={value!r}: must be a positive number")


def _count(name, value, low=1):
    if not isinstance(value, int) or isinstance(value, bool) or value < low:
        raise ValidationError(f"{name}={value!r}: must be an integer >= {low}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every field against its legal range; returns ``cfg``."""
    if cfg.experiment not in EXPERIMENTS:
        raise ValidationError(f"experiment={cfg.experiment!r}: must be one of {EXPERIMENTS}")
    if not cfg.transforms or any(t not in TRANSFORM_CHOICES for t in cfg.transforms):
        raise ValidationError(f"transforms={cfg.transforms!r}: choose from {TRANSFORM_CHOICES}")
    for name in ("repetitions", "eval_samples", "mallows_steps", "steps", "samples", "sinkhorn_iters",
                 "worms", "T", "outer_iters", "inner_steps", "mcmc_sweeps", "limit_samples"):
        vals = getattr(cfg, name)
        for v in vals if isinstance(vals, list) else [vals]:
            _count(name, v)
    _count("seed", cfg.seed, 0)
    _count("num_known", cfg.num_known, 0)
    _count("n", cfg.n, 2)
    _count("lds_n", cfg.lds_n, 2)
    _count("dim", cfg.dim, 1)
    _count("categories", cfg.categories, 2)
    if cfg.T < 2:
        raise ValidationError(f"T={cfg.T}: must be >= 2")
    if cfg.experiment == "matching" and cfg.n > 8:
        raise ValidationError(f"n={cfg.n}: exact posterior enumeration needs n <= 8")
    for name in ("center_scale", "eta", "lr", "tau0", "v_init", "nu_init", "noise_std"):
        _positive(name, getattr(cfg, name))
    for name in ("sigmas", "tols", "limit_taus"):
        vals = getattr(cfg, name)
        if not vals:
            raise ValidationError(f"{name}: must not be empty")
        for v in vals:
            _positive(name, v)
    for v in cfg.mallows_thetas:
        if not (isinstance(v, (int, float)) and v >= 0):
            raise ValidationError(f"mallows_thetas: {v!r} must be >= 0")
    if not 0 < cfg.decay <= 1:
        raise ValidationError(f"decay={cfg.decay}: must lie in (0, 1]")
    for name in ("tau_min_rounding", "tau_min_stick", "lds_tau_min"):
        v = getattr(cfg, name)
        if not 0 < v <= cfg.tau0:
            raise ValidationError(f"{name}={v}: must lie in (0, tau0={cfg.tau0}]")
    if "rounding" in cfg.transforms and not cfg.tau_min_rounding <= 1:
        raise ValidationError("tau_min_rounding must be <= 1")
    if not 0 < cfg.v_min <= cfg.v_max:
        raise ValidationError(f"V bounds [{cfg.v_min}, {cfg.v_max}]: need 0 < v_min <= v_max")
    if not 0 < cfg.nu_min <= cfg.nu_max:
        raise ValidationError(f"nu bounds [{cfg.nu_min}, {cfg.nu_max}]: need 0 < nu_min <= nu_max")
    if not 0 < cfg.density <= 1:
        raise ValidationError(f"density={cfg.density}: must lie in (0, 1]")
    if any(m not in ("bd", "bd_log") for m in cfg.metrics) or not cfg.metrics:
        raise ValidationError(f"metrics={cfg.metrics!r}: choose from ('bd', 'bd_log')")
    if any(m not in ("rounding", "naive", "map", "mcmc") for m in cfg.lds_methods):
        raise ValidationError(f"lds_methods={cfg.lds_methods!r}: unknown method")
    if cfg.num_known > cfg.lds_n:
        raise ValidationError(f"num_known={cfg.num_known}: exceeds lds_n={cfg.lds_n}")
    return cfg


def _coerce(name: str, value):
    """Convert a JSON value to the field's type where that is unambiguous."""
    default = FIELDS[name].default
    if default is dataclasses.MISSING:
        default = FIELDS[name].default_factory()
    if isinstance(default, list):
        if isinstance(value, (str, int, float)):
            value = [value]
        if not isinstance(value, list):
            raise ValidationError(f"{name}: expected a list, got {value!r}")
        return list(value)
    if isinstance(default, bool):
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, int) and isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def from_dict(data: dict) -> ExperimentConfig:
    unknown = sorted(set(data) - set(FIELDS))
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    return validate(ExperimentConfig(**{k: _coerce(k, v) for k, v in data.items()}))


def read_config_file(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    return data


def parse_override(key: str, text: str):
    """Flag values are read as JSON when possible, else as plain strings."""
    if key not in FIELDS:
        raise ValidationError(f"unknown config key: {key}")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    if isinstance(value, str) and "," in value:
        value = [_scalar(v) for v in value.split(",")]
    return value


def _scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """File values first, then ``overrides``; unknown keys are rejected."""
    data = read_config_file(path) if path else {}
    data.update(overrides or {})
    return from_dict(data)
