"""Numerical property checks with independent oracles.

Each check returns a CheckResult; `run_all` backs the `proptest` subcommand.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import NoiseSpec, SyntheticSpec, gen_synthetic
from .hsic import empirical_coco, hsic_biased, hsic_loss
from .kernels import KernelConfig, gram
from .models import LinearModel, MlpModel
from .train import LossKind, TrainConfig, batch_loss_grad, train_hsic


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: str
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.6g} (need {self.threshold}, {self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def dense_hsic(K: np.ndarray, L: np.ndarray) -> float:
    """tr(K H L H) / (n-1)^2 with H built explicitly."""
    n = K.shape[0]
    H = np.eye(n) - np.ones((n, n)) / n
    return float(np.trace(K @ H @ L @ H) / (n - 1) ** 2)


def random_gram_pair(rng: np.random.Generator, n: int):
    d1, d2 = rng.integers(1, 6, size=2)
    X = rng.normal(size=(n, d1))
    Y = rng.normal(size=(n, d2)) + 0.5 * X[:, :1]
    K = gram(X, KernelConfig(rng.uniform(0.1, 2.0))).entries
    L = gram(Y, KernelConfig(rng.uniform(0.1, 2.0))).entries
    return K, L


@_timed
def check_estimator_oracle(cases: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        K, L = random_gram_pair(rng, int(rng.integers(2, 65)))
        ref = dense_hsic(K, L)
        worst = max(worst, abs(hsic_biased(K, L) - ref) / abs(ref))
    return CheckResult("estimator matches dense trace oracle (max rel err)", worst, "<= 1e-10", worst <= 1e-10)


@_timed
def check_invariants(cases: int = 100, seed: int = 1) -> CheckResult:
    """Worst violation across non-negativity, shift, permutation and the n=2 closed form."""
    rng = np.random.default_rng(seed)
    cx, cr = KernelConfig(1.0), KernelConfig(1.0)
    neg = shift = perm = closed = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 40))
        K, L = random_gram_pair(rng, n)
        neg = max(neg, -hsic_biased(K, L))

        X = rng.normal(size=(n, 3))
        r = rng.normal(size=n) + np.sin(X[:, 0])
        base = hsic_loss(X, r, cx, cr)
        shift = max(shift, abs(hsic_loss(X, r + rng.uniform(-50, 50), cx, cr) - base))
        p = rng.permutation(n)
        perm = max(perm, abs(hsic_loss(X[p], r[p], cx, cr) - base))

        a, b = rng.uniform(0, 1, size=2)
        val = hsic_biased(np.array([[1, a], [a, 1]]), np.array([[1, b], [b, 1]]))
        closed = max(closed, abs(val - (1 - a) * (1 - b)))
    ok = neg <= 1e-12 and shift <= 1e-9 and perm <= 1e-12 and closed <= 1e-12
    worst = max(neg / 1e-12, shift / 1e-9, perm / 1e-12, closed / 1e-12)
    res = CheckResult("HSIC invariants (worst violation / tolerance)", worst, "<= 1", ok)
    res.details = {"negativity": neg, "shift": shift, "permutation": perm, "closed_form": closed}
    return res


@_timed
def check_coco(cases: int = 100, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(cases):
        K, L = random_gram_pair(rng, int(rng.integers(2, 33)))
        worst = max(worst, empirical_coco(K, L) ** 2 - hsic_biased(K, L))
    return CheckResult("coco^2 - HSIC (max)", worst, "<= 1e-10", worst <= 1e-10)


def hsic_objective(model, X, y, cfg):
    """Scalar loss used by the finite-difference oracle (eval mode, no dropout)."""
    loss, _ = batch_loss_grad(model, X, y, cfg, training=False)
    return loss


def finite_difference_grad(model, X, y, cfg, step: float = 1e-4) -> np.ndarray:
    theta = model.get_flat()
    g = np.zeros_like(theta)
    for i in range(theta.size):
        t = theta.copy()
        t[i] += step
        model.set_flat(t)
        fp = hsic_objective(model, X, y, cfg)
        t[i] -= 2 * step
        model.set_flat(t)
        fm = hsic_objective(model, X, y, cfg)
        g[i] = (fp - fm) / (2 * step)
    model.set_flat(theta)
    return g


def grad_rel_error(model, X, y, cfg, step: float = 1e-4) -> float:
    _, grads = batch_loss_grad(model, X, y, cfg, training=False)
    analytic = np.concatenate([grads[k].ravel() for k in model.params])
    numeric = finite_difference_grad(model, X, y, cfg, step)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)
    return float(np.linalg.norm(analytic - numeric) / denom)


def random_gradient_case(rng: np.random.Generator, kind: str, loss: str = "hsic"):
    m = int(rng.integers(4, 9))
    d = int(rng.integers(2, 5))
    X = rng.normal(size=(m, d))
    cfg = TrainConfig(loss=loss, batch_size=m, kernel_x=KernelConfig(rng.uniform(0.3, 1.5)),
                      kernel_r=KernelConfig(rng.uniform(0.3, 1.5)))
    if kind == "linear":
        model = LinearModel(d, weights=rng.normal(size=d), bias=rng.normal())
        y = X @ rng.normal(size=d) + rng.normal(size=m)
    else:
        k = 1 if kind == "mlp" else 3
        model = MlpModel([d, 5, 4, k], dropout_prob=0.5, rng=rng)
        for p in model.params.values():
            p[...] = rng.normal(scale=0.8, size=p.shape)
        y = rng.integers(0, k, size=m) if k > 1 else rng.normal(size=m)
    return model, X, y, cfg


@_timed
def check_gradients(cases: int = 60, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    kinds = ("linear", "mlp", "mlp_classifier")
    worst = 0.0
    done = 0
    while done < cases:
        model, X, y, cfg = random_gradient_case(rng, kinds[done % 3])
        _, grads = batch_loss_grad(model, X, y, cfg, training=False)
        if max(np.abs(g).max() for g in grads.values()) < 1e-10:
            continue  # every ReLU dead: nothing to compare
        worst = max(worst, grad_rel_error(model, X, y, cfg))
        done += 1
    return CheckResult("HSIC parameter gradients vs central differences (max rel err)", worst, "<= 1e-5",
                       worst <= 1e-5)


def loglog_slope(ns, values) -> float:
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


@_timed
def check_bias_decay(reps: int = 50, ns=(50, 100, 200, 400), seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = KernelConfig(1.0)
    medians = []
    for n in ns:
        vals = [hsic_loss(rng.normal(size=n), rng.normal(size=n), cfg, cfg) for _ in range(reps)]
        medians.append(np.median(vals))
    slope = loglog_slope(ns, medians)
    res = CheckResult("log-log slope of HSIC under independence", slope, "in [-1.3, -0.7]", -1.3 <= slope <= -0.7)
    res.details = dict(zip(ns, medians))
    return res


def realizable_recovery(seed: int = 0, d: int = 10, n: int = 4096, noise_sigma: float = 0.1,
                        epochs: int = 10, lr: float = 1e-3):
    spec = SyntheticSpec(d=d, noise=NoiseSpec("gaussian", noise_sigma))
    data, beta = gen_synthetic(spec, n, "source", seed)
    cfg = TrainConfig(loss=LossKind.HSIC, batch_size=32, epochs=epochs, lr=lr, seed=seed)
    fitted = train_hsic(data, LinearModel(d), cfg)
    w = fitted.model.weights
    cosine = float(w @ beta / (np.linalg.norm(w) * np.linalg.norm(beta)))
    mean_resid = float(abs(np.mean(data.y - fitted.predict(data.X))))
    return cosine, mean_resid, float(np.std(data.y)), fitted


@_timed
def check_realizable(seed: int = 0) -> CheckResult:
    cosine, mean_resid, std_y, _ = realizable_recovery(seed)
    ok = cosine >= 0.99 and mean_resid <= 1e-3 * std_y
    res = CheckResult("cosine(w_hat, beta) on realizable linear data", cosine, ">= 0.99 and mean residual small", ok)
    res.details = {"mean_residual": mean_resid, "std_y": std_y}
    return res


def run_all(seed: int = 0) -> list:
    return [
        check_estimator_oracle(seed=seed),
        check_invariants(seed=seed + 1),
        check_coco(seed=seed + 2),
        check_gradients(seed=seed + 3),
        check_bias_decay(seed=seed + 4),
        check_realizable(seed=seed),
    ]

