import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hsic_learn.metrics import (
    MetricsRecord,
    accuracy,
    class_balanced_accuracy,
    config_hash,
    mse,
    residual_variance,
)


def test_mse_examples():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([0.0, 0.0], [1.0, -1.0]) == 1.0
    with pytest.raises(ValueError):
        mse([1.0], [1.0, 2.0])


@settings(max_examples=50)
@given(arrays(float, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
def test_mse_against_summation(y):
    p = y[::-1]
    ref = sum((a - b) ** 2 for a, b in zip(y, p)) / len(y)
    assert mse(y, p) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_residual_variance_examples():
    assert residual_variance([3.0, 3.0], [1.0, 1.0]) == 0.0
    assert residual_variance([-1.0, 1.0], [0.0, 0.0]) == 1.0
    assert residual_variance([4.0, 6.0], [1.0, 3.0]) == 0.0
    with pytest.raises(ValueError):
        residual_variance([1.0], [0.0])


@settings(max_examples=50)
@given(arrays(float, st.integers(2, 30), elements=st.floats(-100, 100)), st.floats(-50, 50))
def test_residual_variance_shift_invariant(r, c):
    assert residual_variance(r + c, np.zeros_like(r)) == pytest.approx(
        residual_variance(r, np.zeros_like(r)), abs=1e-8)


def test_accuracy_and_balanced_accuracy():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    labels = np.array([0] * 9 + [1])
    pred = np.zeros(10, dtype=int)
    assert accuracy(labels, pred) == 0.9
    assert class_balanced_accuracy(labels, pred, 2) == 0.5
    bal = np.array([0, 0, 1, 1])
    p = np.array([0, 1, 1, 1])
    assert class_balanced_accuracy(bal, p, 2) == accuracy(bal, p)
    with pytest.raises(ValueError):
        class_balanced_accuracy([0, 0], [0, 0], 2)


def test_record_validation_and_key():
    r = MetricsRecord("synthetic", 1, {"n": 32}, mse_target=1.5)
    assert r.key == ("synthetic", 1, config_hash({"n": 32}))
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    with pytest.raises(ValueError):
        MetricsRecord("synthetic", 1, mse_target=float("nan"))
