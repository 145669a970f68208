"""Biased empirical HSIC, the HSIC loss on residuals and its gradient.

All estimators use the V-statistic form tr(K H L H) / (n - 1)^2 with
H = I - 11^T / n.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import GramMatrix, KernelConfig, center_array, gram, sq_dists


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class RkhsBallSpec:
    """Norm bounds of the input and residual function classes."""

    norm_bound_inputs: float = 1.0
    norm_bound_residuals: float = 1.0

    def __post_init__(self):
        if self.norm_bound_inputs <= 0 or self.norm_bound_residuals <= 0:
            raise ValueError("RKHS ball radii must be positive")

    def scale(self) -> float:
        """Factor relating sup-covariance over these balls to the unit-ball value."""
        return self.norm_bound_inputs * self.norm_bound_residuals


def _entries(G) -> np.ndarray:
    return G.entries if isinstance(G, GramMatrix) else np.asarray(G, dtype=np.float64)


def _check_pair(K: np.ndarray, L: np.ndarray) -> int:
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"K must be square, got {K.shape}")
    if K.shape != L.shape:
        raise ValueError(f"size mismatch: K {K.shape}, L {L.shape}")
    n = K.shape[0]
    if n < 2:
        raise ValueError("HSIC needs at least two samples")
    return n


def hsic_biased(K, L) -> float:
    """tr(K H L H) / (n-1)^2 for uncentered Gram matrices K and L."""
    K, L = _entries(K), _entries(L)
    n = _check_pair(K, L)
    return float(np.sum(center_array(K) * L) / (n - 1) ** 2)


def as_residual_batch(residuals) -> np.ndarray:
    """Coerce residuals to an (m, k) float array and validate them."""
    R = np.asarray(residuals, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    if R.ndim != 2:
        raise ValueError(f"residuals must be (m,) or (m, k), got {R.shape}")
    if R.shape[0] < 2:
        raise ValueError("HSIC needs at least two residuals")
    if not np.all(np.isfinite(R)):
        raise ValueError("residuals contain non-finite entries")
    return R


def hsic_loss(x_batch, residuals, cfg_x: KernelConfig, cfg_r: KernelConfig) -> float:
    R = as_residual_batch(residuals)
    X = np.asarray(x_batch, dtype=np.float64)
    if X.shape[0] != R.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {R.shape[0]} residuals")
    return hsic_biased(gram(X, cfg_x), gram(R, cfg_r))


def residual_loss_and_grad(Kc: np.ndarray, R: np.ndarray, gamma_r: float):
    """HSIC loss and its gradient w.r.t. residual rows, given a centered input Gram.

    This is the inner step of training: Kc = H K H is fixed per mini-batch, only
    the residual kernel changes with the parameters.
    """
    m = R.shape[0]
    L = np.exp(-gamma_r * sq_dists(R))
    W = Kc * L
    scale = 1.0 / (m - 1) ** 2
    loss = scale * W.sum()
    # d L_pj / d r_p = -2 gamma (r_p - r_j) L_pj, and each pair appears twice
    diff = R[:, None, :] - R[None, :, :]
    grad = (-4.0 * gamma_r * scale) * np.einsum("pj,pjk->pk", W, diff)
    return float(loss), grad


def hsic_grad_residuals(x_batch, residuals, cfg_x: KernelConfig, cfg_r: KernelConfig) -> np.ndarray:
    R = as_residual_batch(residuals)
    X = np.asarray(x_batch, dtype=np.float64)
    if X.shape[0] != R.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {R.shape[0]} residuals")
    Kc = center_array(gram(X, cfg_x).entries)
    _, grad = residual_loss_and_grad(Kc, R, cfg_r.gamma)
    return grad


def _psd_sqrt(G: np.ndarray) -> np.ndarray:
    """A with A A^T = G from the symmetric eigendecomposition."""
    n = G.shape[0]
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    if w.min() < -1e-8 * n:
        raise NumericalError(f"Gram matrix is indefinite (min eigenvalue {w.min():.3g})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def empirical_coco(K, L) -> float:
    """Largest singular value of A^T H B / (n-1), with K = A A^T and L = B B^T.

    The squared Frobenius norm of the same matrix over (n-1)^2 is the biased
    HSIC, so coco^2 <= HSIC always.
    """
    K, L = _entries(K), _entries(L)
    n = _check_pair(K, L)
    A, B = _psd_sqrt(K), _psd_sqrt(L)
    HB = B - B.mean(axis=0, keepdims=True)
    cross = A.T @ HB
    return float(np.linalg.norm(cross, ord=2) / (n - 1))
