"""Experiment runners: seeded repeat sweeps, aggregation and result files."""
from __future__ import annotations

import csv
import json
import logging
import platform
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as D
from .config import ExperimentSpec
from .kernels import KernelConfig
from .metrics import MetricsRecord, accuracy, config_hash, mse, residual_variance
from .models import LinearModel, MlpModel
from .optim import EarlyStopConfig
from .rng import stream
from .train import (
    L2_GRID_SMALL,
    RIDGE_ALPHA_GRID,
    SGD_LR_GRID,
    CvSpec,
    TrainConfig,
    cross_validate,
    cross_validate_ridge,
    fit_ols,
    train,
    train_hsic,
)

log = logging.getLogger(__name__)

METRICS = ("mse_source", "mse_target", "residual_variance_target", "accuracy_source", "accuracy_target")
# defaults for the input-kernel width, per experiment
GAMMA_X = {"synthetic": 1.0, "batch_size": 1.0, "bike": 2.0, "mnist_rotated": 22.0}
HSIC_LR_RANGE = {"synthetic": (1e-4, 2e-4), "batch_size": (1e-4, 2e-4), "bike": (8e-4, 1e-3)}


class DataMissingError(FileNotFoundError):
    pass


def derive_seed(seed: int, purpose: str, *idx) -> int:
    return int(stream(seed, purpose, *idx).integers(0, 2 ** 62))


@dataclass
class RunRecord:
    """One trained model evaluated once; `cell` identifies the aggregate row."""

    cell: dict
    repeat: int
    record: MetricsRecord
    extra: dict = field(default_factory=dict)


@dataclass
class ResultsTable:
    key_fields: list
    rows: list  # dicts: key fields + per-metric statistics
    runs: list = field(default_factory=list)

    def columns(self) -> list:
        cols = list(self.key_fields)
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        return cols

    def write_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r.get(k)) for k in cols})

    @staticmethod
    def read_csv(path) -> list:
        with open(path, newline="") as fh:
            return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _parse(v: str):
    if v == "":
        return None
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def aggregate(runs: list, key_fields: list) -> ResultsTable:
    """Group runs by their cell and summarize each metric over repeats.

    Standard errors need at least two repeats; with one they are left empty.
    """
    groups = {}
    for run in runs:
        key = tuple(run.cell[k] for k in key_fields)
        groups.setdefault(key, []).append(run)
    rows = []
    for key, members in sorted(groups.items(), key=lambda kv: kv[0]):
        row = dict(zip(key_fields, key))
        row["repeats"] = len(members)
        for metric in METRICS:
            vals = [m.extra.get(metric, getattr(m.record, metric, None)) for m in members]
            vals = np.array([v for v in vals if v is not None], dtype=float)
            if vals.size == 0:
                continue
            row[f"{metric}_mean"] = float(vals.mean())
            row[f"{metric}_median"] = float(np.median(vals))
            row[f"{metric}_q25"] = float(np.percentile(vals, 25))
            row[f"{metric}_q75"] = float(np.percentile(vals, 75))
            row[f"{metric}_se"] = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size >= 2 else None
        rows.append(row)
    return ResultsTable(list(key_fields), rows, runs)


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- regression pipelines

def _early_stop(spec: ExperimentSpec):
    return EarlyStopConfig(patience=spec.patience, val_fraction=0.1)


def fit_regression(loss: str, tr: D.Dataset, spec: ExperimentSpec, seed: int, batch_size=None, gamma_x=None):
    """Cross-validate one loss on `tr` and refit on all of it.

    Returns (predict function, resolved hyper-parameters).
    """
    d = tr.d
    if loss == "squared":
        model, alpha = cross_validate_ridge(tr, RIDGE_ALPHA_GRID, 0.1, seed)
        return (lambda X: model.predict(X)[:, 0]), {"ridge_alpha": alpha}
    l2_grid = tuple(spec.l2_grid) if spec.l2_grid else L2_GRID_SMALL
    n_train = tr.n - max(1, int(round(0.1 * tr.n)))
    if loss == "absolute":
        template = TrainConfig(loss="absolute", optimizer="sgd", batch_size=spec.batch_size,
                               epochs=spec.epochs, seed=seed, early_stop=_early_stop(spec))
        cv = CvSpec(l2_grid=l2_grid, lr_grid=SGD_LR_GRID)
    else:
        m = batch_size or spec.batch_size
        # HSIC needs a full batch; tiny training sets shrink it
        m = max(2, min(m, n_train))
        gx = gamma_x if gamma_x is not None else (spec.gamma_x or 1.0)
        template = TrainConfig(loss="hsic", batch_size=m, epochs=spec.epochs, seed=seed,
                               kernel_x=KernelConfig(gx), kernel_r=KernelConfig(spec.gamma_r),
                               early_stop=_early_stop(spec))
        lo, hi = spec.hsic_lr_range or HSIC_LR_RANGE["synthetic"]
        cv = CvSpec(l2_grid=l2_grid, lr_range=(lo, hi))
    res = cross_validate(tr, lambda: LinearModel(d), cv, template)
    fitted = train(tr, LinearModel(d), res.config)
    cfg = res.config.summary()
    return fitted.predict, {"lr": cfg["lr"], "l2": cfg["l2"], "epochs": cfg["epochs"], "batch_size": cfg["batch_size"]}


def _synthetic_data(spec: ExperimentSpec, noise: str, n: int, data_seed: int):
    sspec = D.SyntheticSpec(d=spec.d, beta_sigma=spec.beta_sigma, noise=D.NoiseSpec(noise, spec.noise_scale))
    tr, _ = D.gen_synthetic(sspec, n, "source", data_seed, draw=0)
    src, _ = D.gen_synthetic(sspec, spec.n_test, "source", data_seed, draw=1)
    tgt, _ = D.gen_synthetic(sspec, spec.n_test, "target", data_seed, draw=0)
    return tr, src, tgt


def run_synthetic(spec: ExperimentSpec) -> ResultsTable:
    jobs = [(noise, n, r) for noise in spec.noise_kinds for n in spec.n_grid for r in range(spec.repeats)]

    def job(item):
        noise, n, r = item
        data_seed = derive_seed(spec.seed, "synthetic", zlib_key(noise), n, r)
        tr, src, tgt = _synthetic_data(spec, noise, n, data_seed)
        out = []
        for loss in spec.losses:
            predict, hp = fit_regression(loss, tr, spec, data_seed)
            cell = {"noise": noise, "n": n, "loss": loss}
            rec = MetricsRecord("synthetic", data_seed, {**cell, **hp},
                                mse_source=mse(src.y, predict(src.X)), mse_target=mse(tgt.y, predict(tgt.X)))
            out.append(RunRecord(cell, r, rec))
        return out

    runs = [rr for batch in _map(job, jobs, spec.workers) for rr in batch]
    return aggregate(_sorted(runs), ["noise", "n", "loss"])


def run_batch_size(spec: ExperimentSpec) -> ResultsTable:
    noise, n = spec.batch_size_noise, spec.batch_size_n
    jobs = [(m, r) for m in spec.batch_sizes for r in range(spec.repeats)]

    def job(item):
        m, r = item
        # the data depend on the repeat only, never on m
        data_seed = derive_seed(spec.seed, "batch_size", r)
        tr, src, tgt = _synthetic_data(spec, noise, n, data_seed)
        predict, hp = fit_regression("hsic", tr, spec, data_seed, batch_size=m)
        cell = {"batch_size": m}
        rec = MetricsRecord("batch_size", data_seed, {**cell, **hp, "noise": noise, "n": n},
                            mse_source=mse(src.y, predict(src.X)), mse_target=mse(tgt.y, predict(tgt.X)))
        return RunRecord(cell, r, rec)

    return aggregate(_sorted(_map(job, jobs, spec.workers)), ["batch_size"])


def zlib_key(name: str) -> int:
    return zlib.crc32(name.encode())


def _sorted(runs):
    return sorted(runs, key=lambda rr: (rr.repeat, json.dumps(rr.cell, sort_keys=True), config_hash(rr.record.config)))


# ---------------------------------------------------------------- bike sharing

def bike_ols_variance(data: D.Dataset, year: int, season: int) -> float:
    """Deterministic check: OLS on the whole source, residual variance on the whole target."""
    src, tgt = D.partition_bike(data, year, season)
    model = fit_ols(src)
    return residual_variance(tgt.y, model.predict(tgt.X)[:, 0])


def load_bike(spec: ExperimentSpec) -> D.Dataset:
    path = D.bike_path(spec.cache_dir)
    if not path.exists():
        raise DataMissingError(f"{path} is missing; run `hsic-learn fetch --cache {spec.cache_dir}` "
                               "or place the UCI hour.csv there")
    return D.load_bike_csv(path, spec.bike_transform)


def run_bike(spec: ExperimentSpec, data: D.Dataset | None = None) -> ResultsTable:
    data = load_bike(spec) if data is None else data
    gx = spec.gamma_x or GAMMA_X["bike"]
    lo, hi = spec.hsic_lr_range or HSIC_LR_RANGE["bike"]
    jobs = [(y, s, r) for y in spec.bike_years for s in spec.bike_seasons for r in range(spec.repeats)]

    def job(item):
        year, season, r = item
        seed = derive_seed(spec.seed, "bike", year, season, r)
        src, tgt = D.partition_bike(data, year, season)
        src = D.subsample(src, spec.bike_fraction, stream(seed, "subsample-source"))
        tgt = D.subsample(tgt, spec.bike_fraction, stream(seed, "subsample-target"))
        out = []
        cell = {"year": year + 1, "season": season}
        ols = fit_ols(src)
        rec = MetricsRecord("bike", seed, {**cell, "loss": "ols"},
                            mse_source=mse(src.y, ols.predict(src.X)[:, 0]),
                            residual_variance_target=residual_variance(tgt.y, ols.predict(tgt.X)[:, 0]))
        out.append(RunRecord({**cell, "loss": "ols"}, r, rec))
        lr = float(stream(seed, "lr-draw").uniform(lo, hi))
        cfg = TrainConfig(loss="hsic", batch_size=spec.batch_size, epochs=spec.bike_epochs, lr=lr, seed=seed,
                          kernel_x=KernelConfig(gx), kernel_r=KernelConfig(spec.gamma_r),
                          early_stop=EarlyStopConfig(patience=spec.bike_patience, val_fraction=0.1))
        fitted = train_hsic(src, LinearModel(src.d), cfg)
        hp = {"loss": "hsic", "lr": lr, "epochs": fitted.history.best_epoch, "batch_size": spec.batch_size,
              "gamma_x": gx, "gamma_r": spec.gamma_r}
        rec = MetricsRecord("bike", seed, {**cell, **hp},
                            mse_source=mse(src.y, fitted.predict(src.X)),
                            residual_variance_target=residual_variance(tgt.y, fitted.predict(tgt.X)))
        out.append(RunRecord({**cell, "loss": "hsic"}, r, rec))
        return out

    runs = [rr for batch in _map(job, jobs, spec.workers) for rr in batch]
    return aggregate(_sorted(runs), ["year", "season", "loss"])


def bike_markdown(table: ResultsTable) -> str:
    """Target residual variance, mean +- standard error, one line per (year, season)."""
    cells = {}
    for row in table.rows:
        cells.setdefault((row["year"], row["season"]), {})[row["loss"]] = row
    lines = ["| Test data | OLS | HSIC |", "|---|---|---|"]
    for (year, season), by_loss in sorted(cells.items()):
        parts = []
        for loss in ("ols", "hsic"):
            row = by_loss.get(loss)
            if row is None:
                parts.append("-")
                continue
            se = row.get("residual_variance_target_se")
            mean = row["residual_variance_target_mean"]
            parts.append(f"{mean:.1f} ± {se:.2f}" if se is not None else f"{mean:.1f}")
        lines.append(f"| (Y{year}) Season {season} | {parts[0]} | {parts[1]} |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- rotated MNIST

def load_mnist(spec: ExperimentSpec):
    out = []
    for split in ("train", "test"):
        imgs, labels = D.mnist_paths(spec.cache_dir, split)
        if not imgs.exists() or not labels.exists():
            raise DataMissingError(f"MNIST {split} files missing under {imgs.parent}; run `hsic-learn fetch`")
        out.append(D.load_mnist_idx(imgs, labels))
    return tuple(out)


def run_mnist_rotated(spec: ExperimentSpec, train_data=None, test_data=None) -> ResultsTable:
    if train_data is None:
        train_data, test_data = load_mnist(spec)
    gx = spec.gamma_x or GAMMA_X["mnist_rotated"]
    target = D.rotate_images(test_data, (-spec.mnist_angle, spec.mnist_angle), stream(spec.seed, "rotate-test"))
    jobs = [(loss, r) for r in range(spec.repeats) for loss in ("cross_entropy", "hsic")]

    def job(item):
        loss, r = item
        seed = derive_seed(spec.seed, "mnist", r)
        k = min(spec.mnist_train_size, train_data.n)
        tr = train_data.take(np.sort(stream(seed, "mnist-subset").choice(train_data.n, size=k, replace=False)))
        lo, hi = spec.mnist_lr_range
        lr = float(stream(seed, "lr-draw").uniform(lo, hi))
        model = MlpModel.preset(spec.mnist_preset, in_dim=tr.d, rng=stream(seed, "init"))
        cfg = TrainConfig(loss=loss, batch_size=spec.mnist_batch_size, epochs=spec.mnist_epochs, lr=lr, seed=seed,
                          kernel_x=KernelConfig(gx), kernel_r=KernelConfig(spec.gamma_r))
        fitted = train(tr, model, cfg)
        cell = {"model": spec.mnist_preset, "loss": loss}
        acc_s = accuracy(test_data.y, fitted.predict_labels(test_data.X))
        acc_t = accuracy(target.y, fitted.predict_labels(target.X))
        rec = MetricsRecord("mnist_rotated", seed, {**cell, "lr": lr, "epochs": spec.mnist_epochs,
                                                    "batch_size": spec.mnist_batch_size, "gamma_x": gx},
                            accuracy=acc_t)
        return RunRecord(cell, r, rec, extra={"accuracy_source": acc_s, "accuracy_target": acc_t})

    return aggregate(_sorted(_map(job, jobs, spec.workers)), ["model", "loss"])


# ---------------------------------------------------------------- output

def markdown_table(table: ResultsTable, metrics=("mse_source", "mse_target")) -> str:
    cols = list(table.key_fields) + ["repeats"]
    stat_cols = [m for m in metrics if any(f"{m}_mean" in r for r in table.rows)]
    head = cols + [f"{m} (mean ± se)" for m in stat_cols] + [f"{m} median" for m in stat_cols]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in table.rows:
        cells = [str(r[c]) for c in cols]
        for m in stat_cols:
            se = r.get(f"{m}_se")
            cells.append(f"{r[f'{m}_mean']:.4f}" + (f" ± {se:.4f}" if se is not None else ""))
        cells += [f"{r[f'{m}_median']:.4f}" for m in stat_cols]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_outputs(table: ResultsTable, spec: ExperimentSpec, markdown: str, out_dir=None) -> Path:
    """results.csv (one row per cell), runs.csv (one row per trained model), table.md, meta.json."""
    out = Path(out_dir or spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "results.csv")
    run_rows = []
    for rr in table.runs:
        row = {"repeat": rr.repeat, "seed": rr.record.seed, "config_hash": config_hash(rr.record.config)}
        row.update(rr.record.config)
        for m in METRICS:
            v = rr.extra.get(m, getattr(rr.record, m, None))
            if v is not None:
                row[m] = v
        run_rows.append(row)
    cols = []
    for r in run_rows:
        cols += [k for k in r if k not in cols]
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in run_rows:
            w.writerow({k: _fmt(r.get(k)) for k in cols})
    (out / "table.md").write_text(markdown)
    meta = {
        "spec": spec.to_dict(),
        "frozen_defaults": {
            "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
            "sgd_inverse_scaling_power": 0.25,
            "rbf": "exp(-gamma * ||u - v||^2)",
            "bike_target_transform": spec.bike_transform,
            "bike_covariates_restandardized": False,
            "early_stopping": {"val_fraction": 0.1, "patience": spec.patience},
        },
        "numpy": np.__version__,
        "python": platform.python_version(),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out
