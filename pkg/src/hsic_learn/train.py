"""Training loops: HSIC loss with post-hoc bias, baseline losses, cross-validation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .data import Dataset, split_holdout
from .hsic import residual_loss_and_grad
from .kernels import KernelConfig, center_array, gram
from .models import LinearModel, Model, one_hot, softmax, softmax_residual, softmax_residual_vjp
from .optim import Adam, EarlyStopConfig, EarlyStopper, Sgd, l2_grad, l2_penalty
from .rng import stream

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


class LossKind(str, Enum):
    HSIC = "hsic"
    SQUARED = "squared"
    ABSOLUTE = "absolute"
    CROSS_ENTROPY = "cross_entropy"


@dataclass(frozen=True)
class TrainConfig:
    loss: LossKind = LossKind.HSIC
    batch_size: int = 32
    epochs: int = 200
    optimizer: str = "adam"  # "adam" or "sgd" (inverse-scaling decay)
    lr: float = 1e-3
    sgd_power: float = 0.25
    l2: float = 0.0
    kernel_x: KernelConfig = KernelConfig(1.0)
    kernel_r: KernelConfig = KernelConfig(1.0)
    seed: int = 0
    early_stop: EarlyStopConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        if self.loss is LossKind.HSIC and self.batch_size < 2:
            raise ValueError("HSIC training needs batch_size >= 2")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.l2 < 0 or not self.lr > 0:
            raise ValueError("need l2 >= 0 and lr > 0")

    def summary(self) -> dict:
        return {
            "loss": self.loss.value,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "optimizer": self.optimizer,
            "lr": self.lr,
            "sgd_power": self.sgd_power,
            "l2": self.l2,
            "gamma_x": self.kernel_x.gamma,
            "gamma_r": self.kernel_r.gamma,
            "seed": self.seed,
            "patience": None if self.early_stop is None else self.early_stop.patience,
        }


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int | None = None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, tl in enumerate(self.train_loss, start=1):
                vl = self.val_loss[i - 1] if i <= len(self.val_loss) else ""
                w.writerow([i, repr(tl), repr(vl) if vl != "" else ""])


@dataclass
class BiasAdjustedModel:
    """Wrapped model plus the additive bias estimated after HSIC training."""

    model: Model
    bias: float | np.ndarray = 0.0
    history: History | None = None

    def predict(self, X) -> np.ndarray:
        out = self.model.predict(X)
        if out.shape[1] == 1:
            return out[:, 0] + self.bias
        return out + self.bias

    def predict_labels(self, X) -> np.ndarray:
        return np.argmax(self.predict(X), axis=1)


def is_classifier(model: Model) -> bool:
    return model.out_dim > 1


# ---------------------------------------------------------------- batch objectives

def batch_loss_grad(model: Model, X, y, cfg: TrainConfig, rng=None, training=True):
    """Unpenalized loss on one batch and its parameter gradients."""
    out, cache = model.forward(X, training=training, rng=rng)
    m = X.shape[0]
    loss_kind = cfg.loss
    if loss_kind is LossKind.HSIC:
        Kc = center_array(gram(X, cfg.kernel_x).entries)
        if is_classifier(model):
            R = softmax_residual(out, y)
            loss, gR = residual_loss_and_grad(Kc, R, cfg.kernel_r.gamma)
            out_grad = softmax_residual_vjp(out, gR)
        else:
            R = (y - out[:, 0])[:, None]
            loss, gR = residual_loss_and_grad(Kc, R, cfg.kernel_r.gamma)
            out_grad = -gR
    elif loss_kind is LossKind.CROSS_ENTROPY:
        if not is_classifier(model):
            raise ValueError("cross-entropy needs a model with >= 2 outputs")
        s = softmax(out)
        loss = float(-np.mean(np.log(np.maximum(s[np.arange(m), y], 1e-300))))
        out_grad = (s - one_hot(y, out.shape[1])) / m
    else:
        if is_classifier(model):
            raise ValueError(f"{loss_kind.value} loss needs a single-output model")
        r = y - out[:, 0]
        if loss_kind is LossKind.SQUARED:
            loss = float(np.mean(r * r))
            out_grad = (-2.0 * r / m)[:, None]
        else:
            loss = float(np.mean(np.abs(r)))
            out_grad = (-np.sign(r) / m)[:, None]
    return loss, model.backward(cache, out_grad)


def objective(model: Model, data: Dataset, cfg: TrainConfig, max_rows: int = 2048) -> float:
    """Unpenalized training objective on a whole dataset (eval mode).

    HSIC is not a per-sample average, so it is evaluated on the full set
    (first `max_rows` rows).
    """
    X, y = data.X, data.y
    if cfg.loss is LossKind.HSIC:
        X, y = X[:max_rows], y[:max_rows]
        loss, _ = batch_loss_grad(model, X, y, cfg, training=False)
        return loss
    total = 0.0
    for start in range(0, data.n, 4096):
        sl = slice(start, start + 4096)
        loss, _ = batch_loss_grad(model, X[sl], y[sl], cfg, training=False)
        total += loss * X[sl].shape[0]
    return total / data.n


# ---------------------------------------------------------------- loop

def _frozen_keys(model: Model, cfg: TrainConfig) -> tuple:
    # the HSIC loss cannot see a uniform output shift, so the regression output
    # bias is left alone and supplied afterwards by estimate_bias
    if cfg.loss is LossKind.HSIC and not is_classifier(model):
        return (model.output_bias_key,)
    return ()


def fit(data: Dataset, model: Model, cfg: TrainConfig, val: Dataset | None = None) -> History:
    """Mini-batch training in place. Returns the per-epoch history.

    With `cfg.early_stop` set, validation loss is tracked on `val` (or on a
    split carved out of `data`), and the best parameters are restored.
    """
    if cfg.early_stop is not None and val is None:
        data, val = split_holdout(data, cfg.early_stop.val_fraction, stream(cfg.seed, "early-stop-split"))
    m = cfg.batch_size
    n = data.n
    if cfg.loss is LossKind.HSIC and n < m:
        raise ValueError(f"HSIC training needs n >= batch size ({n} < {m})")
    opt = Adam(lr=cfg.lr) if cfg.optimizer == "adam" else Sgd(cfg.lr, cfg.sgd_power)
    shuffle_rng = stream(cfg.seed, "shuffle")
    dropout_rng = stream(cfg.seed, "dropout")
    frozen = _frozen_keys(model, cfg)
    stopper = EarlyStopper(cfg.early_stop.patience) if cfg.early_stop is not None else None
    hist = History()
    X, y = data.X, data.y
    # HSIC drops the ragged tail batch, baselines keep it
    n_batches = n // m if cfg.loss is LossKind.HSIC else -(-n // m)
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.permutation(n)
        losses = []
        for b in range(n_batches):
            idx = perm[b * m:(b + 1) * m]
            loss, grads = batch_loss_grad(model, X[idx], y[idx], cfg, rng=dropout_rng)
            if cfg.l2 > 0:
                reg = l2_grad(cfg.l2, model.params, exclude=model.bias_keys)
                grads = {k: g + reg[k] for k, g in grads.items()}
                loss += l2_penalty(cfg.l2, model.params, exclude=model.bias_keys)
            for k in frozen:
                grads.pop(k, None)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            opt.step(model.params, grads)
            losses.append(loss)
        hist.train_loss.append(float(np.mean(losses)))
        if stopper is not None:
            vl = objective(model, val, cfg)
            hist.val_loss.append(vl)
            if stopper.update(epoch, vl, model.params):
                break
    if stopper is not None and stopper.best_params is not None:
        model.load_params(stopper.best_params)
        hist.best_epoch = stopper.best_epoch
    else:
        hist.best_epoch = len(hist.train_loss)
    return hist


def estimate_bias(model, data: Dataset) -> float:
    """mean(y) - mean(prediction) over the full training set."""
    if data.n == 0:
        raise ValueError("cannot estimate a bias from empty data")
    pred = model.predict(data.X)
    if pred.ndim == 2:
        pred = pred[:, 0]
    return float(np.mean(data.y) - np.mean(pred))


def train_hsic(data: Dataset, model: Model, cfg: TrainConfig, val: Dataset | None = None,
               curve_path=None) -> BiasAdjustedModel:
    if cfg.loss is not LossKind.HSIC:
        raise ValueError("train_hsic needs cfg.loss == hsic")
    hist = fit(data, model, cfg, val=val)
    if curve_path is not None:
        hist.write_csv(curve_path)
    if is_classifier(model):
        return BiasAdjustedModel(model, np.zeros(model.out_dim), hist)
    return BiasAdjustedModel(model, estimate_bias(model, data), hist)


def train_baseline(data: Dataset, model: Model, cfg: TrainConfig, val: Dataset | None = None,
                   curve_path=None) -> Model:
    if cfg.loss is LossKind.HSIC:
        raise ValueError("use train_hsic for the HSIC loss")
    hist = fit(data, model, cfg, val=val)
    if curve_path is not None:
        hist.write_csv(curve_path)
    model.history = hist
    return model


def train(data, model, cfg, val=None) -> BiasAdjustedModel:
    """Dispatch on the loss; baselines are wrapped with a zero bias."""
    if cfg.loss is LossKind.HSIC:
        return train_hsic(data, model, cfg, val=val)
    m = train_baseline(data, model, cfg, val=val)
    return BiasAdjustedModel(m, 0.0 if not is_classifier(m) else np.zeros(m.out_dim), m.history)


# ---------------------------------------------------------------- closed-form least squares

def fit_ridge(data: Dataset, alpha: float = 0.0) -> LinearModel:
    """Minimize sum_i (y_i - x_i.w - b)^2 + alpha ||w||^2 with an unpenalized intercept."""
    X, y = np.asarray(data.X, float), np.asarray(data.y, float)
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    if alpha == 0.0:
        w = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    else:
        w = np.linalg.solve(Xc.T @ Xc + alpha * np.eye(X.shape[1]), Xc.T @ yc)
    return LinearModel(X.shape[1], weights=w, bias=ym - xm @ w)


def fit_ols(data: Dataset) -> LinearModel:
    return fit_ridge(data, 0.0)


# ---------------------------------------------------------------- cross-validation

# default cross-validation grids
L2_GRID_SMALL = (15, 12, 10, 5, 1, 0.1, 0.01, 0.001, 0.0001, 0.00001, 0.000001, 0)
RIDGE_ALPHA_GRID = tuple(range(35, 70, 2))
SGD_LR_GRID = (0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001, 0.00005, 0.00001)


@dataclass(frozen=True)
class CvSpec:
    l2_grid: tuple = L2_GRID_SMALL
    lr_grid: tuple | None = None  # explicit learning rates, or
    lr_range: tuple | None = None  # one seeded uniform draw from [lo, hi]
    val_fraction: float = 0.1

    def __post_init__(self):
        if not len(self.l2_grid):
            raise ValueError("l2 grid is empty")
        if self.lr_grid is not None and not len(self.lr_grid):
            raise ValueError("lr grid is empty")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")

    def learning_rates(self, seed: int, default: float) -> list:
        if self.lr_grid is not None:
            return list(self.lr_grid)
        if self.lr_range is not None:
            lo, hi = self.lr_range
            return [float(stream(seed, "lr-draw").uniform(lo, hi))]
        return [default]


@dataclass
class CvResult:
    config: TrainConfig
    model: BiasAdjustedModel
    val_loss: float
    scores: list  # (l2, lr, val_loss, best_epoch) per grid point


def cross_validate(data: Dataset, model_factory, cv: CvSpec, template: TrainConfig) -> CvResult:
    """Grid search on a seeded holdout, scored by the unpenalized objective.

    The returned config has `epochs` set to the best epoch seen during
    early stopping (if any), so it can be refit on the full data.
    """
    train_part, hold = split_holdout(data, cv.val_fraction, stream(template.seed, "cv-split"))
    scores, best = [], None
    for lr in cv.learning_rates(template.seed, template.lr):
        for lam in cv.l2_grid:
            cfg = replace(template, l2=float(lam), lr=float(lr))
            try:
                fitted = train(train_part, model_factory(), cfg, val=hold if cfg.early_stop else None)
                vl = objective(fitted.model, hold, cfg)
            except TrainingDivergedError:
                vl = np.inf
                fitted = None
            best_epoch = fitted.history.best_epoch if fitted is not None else None
            scores.append((float(lam), float(lr), vl, best_epoch))
            if not np.isfinite(vl):
                continue
            key = (vl, lam, lr)
            if best is None or key < best[0]:
                best = (key, cfg, fitted, best_epoch)
    if best is None:
        raise TrainingDivergedError("no grid point produced a finite validation loss")
    _, cfg, fitted, best_epoch = best
    if cfg.early_stop is not None and best_epoch:
        cfg = replace(cfg, epochs=int(best_epoch), early_stop=None)
    return CvResult(cfg, fitted, best[0][0], scores)


def cross_validate_ridge(data: Dataset, alphas=RIDGE_ALPHA_GRID, val_fraction: float = 0.1, seed: int = 0):
    """Pick the ridge alpha by holdout MSE, then refit on all of `data`."""
    train_part, hold = split_holdout(data, val_fraction, stream(seed, "cv-split"))
    scores = []
    for a in alphas:
        m = fit_ridge(train_part, float(a))
        scores.append((float(np.mean((hold.y - m.predict(hold.X)[:, 0]) ** 2)), float(a)))
    _, alpha = min(scores)
    return fit_ridge(data, alpha), alpha
