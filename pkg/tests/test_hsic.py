import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsic_learn.checks import dense_hsic, random_gram_pair
from hsic_learn.hsic import (
    NumericalError,
    RkhsBallSpec,
    empirical_coco,
    hsic_biased,
    hsic_grad_residuals,
    hsic_loss,
)
from hsic_learn.kernels import KernelConfig, gram

ONE = KernelConfig(1.0)


def fd_residual_grad(X, R, cx, cr, step=1e-4):
    g = np.zeros_like(R)
    for idx in np.ndindex(R.shape):
        Rp, Rm = R.copy(), R.copy()
        Rp[idx] += step
        Rm[idx] -= step
        g[idx] = (hsic_loss(X, Rp, cx, cr) - hsic_loss(X, Rm, cx, cr)) / (2 * step)
    return g


def test_two_sample_closed_form():
    a, b = 0.2, 0.65
    K = np.array([[1, a], [a, 1]])
    L = np.array([[1, b], [b, 1]])
    assert hsic_biased(K, L) == pytest.approx((1 - a) * (1 - b), abs=1e-15)


def test_constant_residual_kernel_gives_zero(rng):
    K = gram(rng.normal(size=(7, 2)), ONE)
    assert hsic_biased(K, np.ones((7, 7))) == pytest.approx(0.0, abs=1e-15)


def test_matches_dense_oracle(rng):
    K, L = random_gram_pair(rng, 6)
    assert hsic_biased(K, L) == pytest.approx(dense_hsic(K, L), rel=1e-12)


def test_bad_sizes():
    with pytest.raises(ValueError):
        hsic_biased(np.ones((1, 1)), np.ones((1, 1)))
    with pytest.raises(ValueError):
        hsic_biased(np.eye(3), np.eye(4))
    with pytest.raises(ValueError):
        hsic_loss(np.zeros((3, 1)), np.zeros(4), ONE, ONE)
    with pytest.raises(ValueError):
        hsic_loss(np.zeros((2, 1)), [0.0, np.nan], ONE, ONE)


def test_five_sample_frozen_value():
    x = np.arange(5.0)
    # brute-force trace with materialized H, computed once with scalar exp loops
    assert hsic_loss(x, x, ONE, ONE) == pytest.approx(0.21394885367112684, rel=1e-12)


def test_hsic_loss_constant_residuals(rng):
    X = rng.normal(size=(9, 3))
    assert hsic_loss(X, np.full(9, 2.5), ONE, ONE) == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_array_equal(hsic_grad_residuals(X, np.full(9, 2.5), ONE, ONE), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.floats(-100, 100), st.integers(0, 2 ** 32 - 1))
def test_shift_and_permutation_invariance(n, c, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    r = rng.normal(size=n) + X[:, 0] ** 2
    base = hsic_loss(X, r, ONE, ONE)
    assert base >= -1e-12
    assert abs(hsic_loss(X, r + c, ONE, ONE) - base) <= 1e-9
    p = rng.permutation(n)
    assert abs(hsic_loss(X[p], r[p], ONE, ONE) - base) <= 1e-12


@pytest.mark.parametrize("k", [1, 3])
def test_residual_gradient_matches_finite_differences(rng, k):
    X = rng.normal(size=(8, 3))
    R = rng.normal(size=(8, k))
    cx, cr = KernelConfig(0.6), KernelConfig(0.9)
    g = hsic_grad_residuals(X, R, cx, cr)
    ref = fd_residual_grad(X, R, cx, cr)
    assert np.linalg.norm(g - ref) / np.linalg.norm(ref) <= 1e-5


def test_gradient_permutes_with_samples(rng):
    X = rng.normal(size=(6, 2))
    R = rng.normal(size=(6, 1))
    p = rng.permutation(6)
    g = hsic_grad_residuals(X, R, ONE, ONE)
    np.testing.assert_allclose(hsic_grad_residuals(X[p], R[p], ONE, ONE), g[p], atol=1e-15)


def test_coco_examples():
    a, b = 0.1, 0.8
    K = np.array([[1, a], [a, 1]])
    L = np.array([[1, b], [b, 1]])
    assert empirical_coco(K, L) ** 2 == pytest.approx(hsic_biased(K, L), rel=1e-10)
    I3 = np.eye(3)
    assert hsic_biased(I3, I3) == pytest.approx(0.5)
    assert empirical_coco(I3, I3) == pytest.approx(0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 32), st.integers(0, 2 ** 32 - 1))
def test_coco_bounded_by_hsic(n, seed):
    K, L = random_gram_pair(np.random.default_rng(seed), n)
    coco = empirical_coco(K, L)
    assert coco ** 2 <= hsic_biased(K, L) + 1e-10
    # Frobenius norm of the same cross matrix, from a full SVD, is sqrt(HSIC)
    w, V = np.linalg.eigh(K)
    A = V * np.sqrt(np.clip(w, 0, None))
    w, V = np.linalg.eigh(L)
    B = V * np.sqrt(np.clip(w, 0, None))
    H = np.eye(n) - 1.0 / n
    s = np.linalg.svd(A.T @ H @ B, compute_uv=False)
    assert coco == pytest.approx(s[0] / (n - 1), rel=1e-9, abs=1e-12)
    assert np.sum(s ** 2) / (n - 1) ** 2 == pytest.approx(hsic_biased(K, L), rel=1e-8, abs=1e-12)


def test_coco_rejects_indefinite():
    with pytest.raises(NumericalError):
        empirical_coco(np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2))


def test_rkhs_ball_spec():
    assert RkhsBallSpec().scale() == 1.0
    assert RkhsBallSpec(2.0, 3.0).scale() == 6.0
    with pytest.raises(ValueError):
        RkhsBallSpec(0.0, 1.0)
