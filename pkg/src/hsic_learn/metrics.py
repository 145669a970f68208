"""Evaluation metrics and the per-run record."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np


def _pair(y, pred):
    y = np.asarray(y, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if y.shape != pred.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {pred.shape}")
    return y, pred


def mse(y, predictions) -> float:
    y, p = _pair(y, predictions)
    if y.size < 1:
        raise ValueError("mse of an empty vector")
    return float(np.mean((y - p) ** 2))


def residual_variance(y, predictions) -> float:
    """Population (divide-by-n) variance of y - prediction."""
    y, p = _pair(y, predictions)
    if y.size < 2:
        raise ValueError("residual variance needs at least two values")
    return float(np.var(y - p))


def accuracy(labels, predicted) -> float:
    labels, predicted = np.asarray(labels), np.asarray(predicted)
    return float(np.mean(labels == predicted))


def class_balanced_accuracy(labels, predicted, k: int) -> float:
    labels, predicted = np.asarray(labels), np.asarray(predicted)
    per_class = []
    for c in range(k):
        sel = labels == c
        if not sel.any():
            raise ValueError(f"class {c} has no samples")
        per_class.append(np.mean(predicted[sel] == c))
    return float(np.mean(per_class))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


@dataclass
class MetricsRecord:
    experiment: str
    seed: int
    config: dict = field(default_factory=dict)
    mse_source: float | None = None
    mse_target: float | None = None
    residual_variance_target: float | None = None
    accuracy: float | None = None
    class_balanced_accuracy: float | None = None

    def __post_init__(self):
        for name in ("mse_source", "mse_target", "residual_variance_target", "accuracy", "class_balanced_accuracy"):
            v = getattr(self, name)
            if v is not None and not np.isfinite(v):
                raise ValueError(f"{name} is not finite: {v}")

    @property
    def key(self):
        return (self.experiment, self.seed, config_hash(self.config))

    def as_dict(self) -> dict:
        return asdict(self)
