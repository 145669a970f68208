"""Experiment configuration: a flat dataclass loaded from JSON, overridable by dotted flags."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

EXPERIMENTS = ("synthetic", "bike", "mnist_rotated", "batch_size", "proptest")
# desk-scale repeat counts when none is given; --paper-scale restores the full-size ones
DEFAULT_REPEATS = {"mnist_rotated": 5}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    experiment: str = "synthetic"
    repeats: int = 20
    seed: int = 0
    out_dir: str = "results"
    cache_dir: str = "data_cache"
    workers: int = 1

    # synthetic / batch-size study
    d: int = 100
    beta_sigma: float = 0.1
    noise_kinds: list = field(default_factory=lambda: ["gaussian", "laplacian", "shifted_exponential"])
    noise_scale: float = 1.0
    n_grid: list = field(default_factory=lambda: [32, 128, 512])
    losses: list = field(default_factory=lambda: ["squared", "absolute", "hsic"])
    n_test: int = 1000
    batch_size: int = 32
    batch_sizes: list = field(default_factory=lambda: [32, 64, 128])
    batch_size_n: int = 512
    batch_size_noise: str = "laplacian"

    # training
    epochs: int = 200
    patience: int = 25
    gamma_x: float | None = None  # None: per-experiment default
    gamma_r: float = 1.0
    hsic_lr_range: list | None = None
    l2_grid: list | None = None

    # bike sharing
    bike_transform: str = "sqrt"
    bike_fraction: float = 0.8
    bike_years: list = field(default_factory=lambda: [0, 1])
    bike_seasons: list = field(default_factory=lambda: [1, 2, 3, 4])
    bike_epochs: int = 20
    bike_patience: int = 5

    # rotated MNIST
    mnist_preset: str = "mlp-524"
    mnist_train_size: int = 10000
    mnist_epochs: int = 7
    mnist_batch_size: int = 32
    mnist_lr_range: list = field(default_factory=lambda: [1e-4, 4e-4])
    mnist_angle: float = 45.0

    paper_scale: bool = False

    def validate(self) -> "ExperimentSpec":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for name in ("n_grid", "losses", "noise_kinds", "batch_sizes"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be non-empty")
        bad = set(self.losses) - {"squared", "absolute", "hsic"}
        if bad:
            raise ConfigError(f"unknown losses {sorted(bad)}")
        bad = set(self.noise_kinds) - {"gaussian", "laplacian", "shifted_exponential"}
        if bad:
            raise ConfigError(f"unknown noise kinds {sorted(bad)}")
        if min(self.n_grid) < 2 or self.batch_size < 2 or min(self.batch_sizes) < 2:
            raise ConfigError("sample sizes and HSIC batch sizes must be >= 2")
        if not 0 < self.bike_fraction <= 1:
            raise ConfigError("bike_fraction must be in (0, 1]")
        return self

    def apply_paper_scale(self) -> "ExperimentSpec":
        """Full-size repeat counts and n grid."""
        self.paper_scale = True
        self.repeats = {"bike": 100, "mnist_rotated": 20}.get(self.experiment, 20)
        self.n_grid = [2 ** i for i in range(5, 14)]
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(value: str, current):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, list) or current is None:
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = [_scalar(v) for v in value.split(",")]
        if isinstance(current, list) and not isinstance(parsed, list):
            parsed = [parsed]
        return parsed
    return value


def _scalar(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_spec(path=None, overrides=None, **kwargs) -> ExperimentSpec:
    """JSON file, then keyword defaults, then `name=value` overrides (dotted names allowed)."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    names = {f.name for f in fields(ExperimentSpec)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    data.update({k: v for k, v in kwargs.items() if v is not None})
    spec = ExperimentSpec(**data)
    if "repeats" not in data:
        spec.repeats = DEFAULT_REPEATS.get(spec.experiment, spec.repeats)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must look like name=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip().lstrip("-").replace("-", "_").split(".")[-1]
        if key not in names:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(spec, key, _coerce(value, getattr(spec, key)))
    return spec
