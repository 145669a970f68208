import json
import zlib

import numpy as np
import pytest

from hsic_learn.checks import grad_rel_error, random_gradient_case
from hsic_learn.hsic import hsic_loss
from hsic_learn.kernels import KernelConfig
from hsic_learn.models import (
    LinearModel,
    MlpModel,
    backward,
    forward,
    load_model,
    model_from_dict,
    predict,
    softmax,
    softmax_residual,
    softmax_residual_vjp,
)


def test_linear_forward_example():
    m = LinearModel(2, weights=[1.0, 2.0])
    out, _ = forward(m, np.array([[3.0, 4.0]]))
    assert out.shape == (1, 1) and out[0, 0] == 11.0


def test_zero_weight_mlp_outputs_final_bias(rng):
    m = MlpModel([4, 6, 5, 3], rng=rng)
    for p in m.params.values():
        p[...] = 0.0
    m.params["b2"][...] = [0.5, -1.0, 2.0]
    out = predict(m, rng.normal(size=(7, 4)))
    np.testing.assert_array_equal(out, np.tile([0.5, -1.0, 2.0], (7, 1)))


def test_eval_mode_is_deterministic(rng):
    m = MlpModel.preset("mlp-256", in_dim=20, n_classes=4, rng=rng)
    X = rng.normal(size=(5, 20))
    np.testing.assert_array_equal(predict(m, X), predict(m, X))


def test_shape_errors(rng):
    m = LinearModel(3)
    with pytest.raises(ValueError):
        forward(m, np.zeros((2, 4)))
    _, cache = forward(m, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        backward(m, cache, np.zeros((3, 1)))
    with pytest.raises(ValueError):
        backward(LinearModel(3), cache, np.zeros((2, 1)))


def test_linear_backward_closed_form(rng):
    m = LinearModel(4, weights=rng.normal(size=4))
    X = rng.normal(size=(6, 4))
    G = rng.normal(size=(6, 1))
    _, cache = forward(m, X)
    grads = backward(m, cache, G)
    np.testing.assert_allclose(grads["weights"], X.T @ G[:, 0])
    assert grads["bias"] == pytest.approx(G.sum())


def test_zero_out_grad_gives_zero_gradients(rng):
    m = MlpModel([3, 4, 2], rng=rng)
    _, cache = forward(m, rng.normal(size=(5, 3)))
    for g in backward(m, cache, np.zeros((5, 2))).values():
        assert not g.any()


def _vjp_scalar(m, X, G):
    out, _ = forward(m, X)
    return float(np.sum(G * out))


def test_mlp_backward_finite_differences(rng):
    m = MlpModel([3, 6, 5, 2], dropout_prob=0.5, rng=rng)
    X = rng.normal(size=(6, 3))
    G = rng.normal(size=(6, 2))
    _, cache = forward(m, X)
    grads = backward(m, cache, G)
    analytic = np.concatenate([grads[k].ravel() for k in m.params])
    theta = m.get_flat()
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        t = theta.copy()
        t[i] += 1e-4
        m.set_flat(t)
        fp = _vjp_scalar(m, X, G)
        t[i] -= 2e-4
        m.set_flat(t)
        numeric[i] = (fp - _vjp_scalar(m, X, G)) / 2e-4
    m.set_flat(theta)
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) <= 1e-5


def test_dropout_masks_follow_the_seed(rng):
    m = MlpModel([5, 8, 8, 2], dropout_prob=0.5, rng=rng)
    X = rng.normal(size=(4, 5))
    a, ca = forward(m, X, training=True, rng=np.random.default_rng(7))
    b, cb = forward(m, X, training=True, rng=np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(ca.masks[0], cb.masks[0])
    assert set(np.unique(ca.masks[0])) <= {0.0, 2.0}
    with pytest.raises(ValueError):
        forward(m, X, training=True)


def test_dropout_backward_uses_mask(rng):
    m = MlpModel([3, 4, 4, 1], dropout_prob=0.5, rng=rng)
    X = rng.normal(size=(5, 3))
    out, cache = forward(m, X, training=True, rng=np.random.default_rng(1))
    G = rng.normal(size=(5, 1))
    grads = backward(m, cache, G)
    # the output layer sees the masked activations
    np.testing.assert_allclose(grads["W2"], cache.inputs[2].T @ G)


@pytest.mark.parametrize("kind,loss", [
    ("linear", "hsic"), ("mlp", "hsic"), ("mlp_classifier", "hsic"),
    ("linear", "squared"), ("mlp", "squared"), ("linear", "absolute"), ("mlp", "absolute"),
    ("mlp_classifier", "cross_entropy"),
])
def test_end_to_end_gradients(kind, loss):
    rng = np.random.default_rng(zlib.crc32((kind + loss).encode()))
    checked = 0
    while checked < 5:
        model, X, y, cfg = random_gradient_case(rng, kind, loss)
        if loss == "absolute":
            resid = y - model.predict(X)[:, 0]
            if np.min(np.abs(resid)) < 1e-3:
                continue  # kink of |r| inside the difference stencil
        assert grad_rel_error(model, X, y, cfg) <= 1e-5
        checked += 1


def test_softmax_residual_examples():
    np.testing.assert_allclose(softmax_residual([[0.0, 0.0]], [0]), [[0.5, -0.5]])
    r = softmax_residual([[10.0, 0.0, 0.0]], [0])
    assert np.abs(r).max() < 1e-3
    with pytest.raises(ValueError):
        softmax_residual([[0.0, 0.0]], [2])


def test_softmax_residual_rows_sum_to_zero(rng):
    Z = rng.normal(scale=5, size=(20, 7))
    r = softmax_residual(Z, rng.integers(0, 7, size=20))
    assert np.abs(r.sum(axis=1)).max() <= 1e-12
    np.testing.assert_allclose(softmax(Z).sum(axis=1), 1.0)


def test_softmax_residual_vjp_matches_finite_differences(rng):
    Z = rng.normal(size=(3, 4))
    y = rng.integers(0, 4, size=3)
    G = rng.normal(size=(3, 4))
    analytic = softmax_residual_vjp(Z, G)
    numeric = np.zeros_like(Z)
    for idx in np.ndindex(Z.shape):
        Zp, Zm = Z.copy(), Z.copy()
        Zp[idx] += 1e-5
        Zm[idx] -= 1e-5
        numeric[idx] = np.sum(G * (softmax_residual(Zp, y) - softmax_residual(Zm, y))) / 2e-5
    np.testing.assert_allclose(analytic, numeric, atol=1e-8)


def test_hsic_ignores_linear_bias(rng):
    X = rng.normal(size=(12, 3))
    y = rng.normal(size=12)
    m = LinearModel(3, weights=rng.normal(size=3))
    cfg = KernelConfig(1.0)
    before = hsic_loss(X, y - m.predict(X)[:, 0], cfg, cfg)
    m.params["bias"][...] = 17.5
    after = hsic_loss(X, y - m.predict(X)[:, 0], cfg, cfg)
    assert abs(before - after) <= 1e-9


def test_json_round_trip(tmp_path, rng):
    for m in (LinearModel(3, weights=[1.0, -2.0, 0.5], bias=0.25), MlpModel([4, 5, 3], dropout_prob=0.5, rng=rng)):
        m.save(tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        X = rng.normal(size=(3, m.in_dim))
        np.testing.assert_array_equal(back.predict(X), m.predict(X))
        d = json.loads((tmp_path / "m.json").read_text())
        assert set(d) == {"kind", "layer_dims", "activation", "dropout_prob", "params"}
    with pytest.raises(ValueError):
        model_from_dict({"kind": "cnn"})


def test_presets():
    m = MlpModel.preset("mlp-524")
    assert m.layer_dims == [784, 524, 524, 10]
    assert m.dropout_prob == 0.5
