"""RBF kernels, Gram matrices and centering."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class DegenerateDataError(ValueError):
    """Raised when a sample carries no usable spread (e.g. all points equal)."""


class KernelKind(str, Enum):
    # Only RBF for now; a new kind needs a branch in `gram` and `rbf`.
    RBF = "rbf"


@dataclass(frozen=True)
class KernelConfig:
    gamma: float = 1.0
    kind: KernelKind = KernelKind.RBF

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        object.__setattr__(self, "kind", KernelKind(self.kind))


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    centered: bool = False

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def _as_points(points) -> np.ndarray:
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2:
        raise ValueError(f"points must be a list of vectors, got shape {P.shape}")
    if P.shape[0] == 0:
        raise ValueError("need at least one point")
    return P


def rbf(u, v, gamma: float) -> float:
    """exp(-gamma * ||u - v||^2)."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    diff = u - v
    return float(np.exp(-gamma * np.dot(diff, diff)))


def sq_dists(P: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, exact zeros on the diagonal."""
    n, d = P.shape
    if d <= 16 and n * n * d <= 4_000_000:
        # difference form is exact for coincident points; the expansion below
        # loses precision to cancellation
        diff = P[:, None, :] - P[None, :, :]
        D = np.einsum("ijk,ijk->ij", diff, diff)
    else:
        sq = np.einsum("ij,ij->i", P, P)
        D = sq[:, None] + sq[None, :] - 2.0 * (P @ P.T)
        np.maximum(D, 0.0, out=D)
        D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


def gram(points, cfg: KernelConfig) -> GramMatrix:
    P = _as_points(points)
    return GramMatrix(np.exp(-cfg.gamma * sq_dists(P)), centered=False)


def center_array(G: np.ndarray) -> np.ndarray:
    """H G H without forming H: subtract row and column means, add the grand mean."""
    row = G.mean(axis=1, keepdims=True)
    col = G.mean(axis=0, keepdims=True)
    C = G - row - col + G.mean()
    return 0.5 * (C + C.T)


def center(G: GramMatrix) -> GramMatrix:
    return GramMatrix(center_array(G.entries), centered=True)


def median_gamma(points) -> float:
    """Median heuristic, gamma = 1 / (2 * median_pairwise_distance^2)."""
    P = _as_points(points)
    if P.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    iu = np.triu_indices(P.shape[0], k=1)
    dists = np.sqrt(sq_dists(P)[iu])
    m = float(np.median(dists))
    if m == 0.0:
        raise DegenerateDataError("median pairwise distance is zero")
    return 1.0 / (2.0 * m * m)
