"""Linear and MLP predictors with hand-written forward and backward passes."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# hidden widths used for the rotated-digit experiments
MLP_PRESETS = {"mlp-256": 256, "mlp-524": 524, "mlp-1024": 1024}


@dataclass
class ForwardCache:
    model_id: int
    n_rows: int
    training: bool
    inputs: list = field(default_factory=list)  # input of each affine layer
    pre_acts: list = field(default_factory=list)  # hidden pre-activations
    masks: list = field(default_factory=list)  # dropout masks (None if off)


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Model:
    """Common plumbing. Subclasses fill `params` and implement forward/backward."""

    kind = "base"
    params: dict
    bias_keys: tuple = ()
    output_bias_key: str = ""

    @property
    def in_dim(self) -> int:
        raise NotImplementedError

    @property
    def out_dim(self) -> int:
        raise NotImplementedError

    def _check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ValueError(f"expected (m, {self.in_dim}) input, got {X.shape}")
        return X

    def _check_cache(self, cache: ForwardCache, out_grad) -> np.ndarray:
        if cache.model_id != id(self):
            raise ValueError("cache was produced by a different model")
        G = np.asarray(out_grad, dtype=np.float64)
        if G.ndim == 1:
            G = G[:, None]
        if G.shape != (cache.n_rows, self.out_dim):
            raise ValueError(f"out_grad shape {G.shape} does not match ({cache.n_rows}, {self.out_dim})")
        return G

    def predict(self, X) -> np.ndarray:
        out, _ = self.forward(X, training=False)
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.params.values():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, saved: dict) -> None:
        for k, v in saved.items():
            self.params[k][...] = v

    def to_dict(self) -> dict:
        raise NotImplementedError

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


class LinearModel(Model):
    """h(x) = x . w + b, single output."""

    kind = "linear"
    bias_keys = ("bias",)
    output_bias_key = "bias"

    def __init__(self, d: int, weights=None, bias: float = 0.0):
        w = np.zeros(d) if weights is None else np.array(weights, dtype=np.float64)
        if w.shape != (d,):
            raise ValueError(f"weights must have shape ({d},)")
        self.params = {"weights": w, "bias": np.array(float(bias))}

    @property
    def in_dim(self):
        return self.params["weights"].shape[0]

    @property
    def out_dim(self):
        return 1

    @property
    def weights(self):
        return self.params["weights"]

    @property
    def bias(self):
        return float(self.params["bias"])

    def forward(self, X, training=False, rng=None):
        X = self._check_input(X)
        out = (X @ self.params["weights"] + self.params["bias"])[:, None]
        return out, ForwardCache(id(self), X.shape[0], training, inputs=[X])

    def backward(self, cache, out_grad):
        G = self._check_cache(cache, out_grad)[:, 0]
        X = cache.inputs[0]
        return {"weights": X.T @ G, "bias": np.array(G.sum())}

    def to_dict(self):
        return {
            "kind": self.kind,
            "layer_dims": [self.in_dim, 1],
            "activation": None,
            "dropout_prob": 0.0,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
        }


class MlpModel(Model):
    """Affine -> ReLU blocks, optional dropout before the output layer."""

    kind = "mlp"

    def __init__(self, layer_dims, dropout_prob: float = 0.0, activation: str = "relu", rng=None):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"bad layer dims {layer_dims}")
        if not 0.0 <= dropout_prob < 1.0:
            raise ValueError("dropout_prob must be in [0, 1)")
        if activation != "relu":
            raise ValueError(f"unsupported activation {activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.layer_dims = dims
        self.dropout_prob = float(dropout_prob)
        self.activation = activation
        self.params = {}
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"W{i}"] = glorot_uniform(a, b, rng)
            self.params[f"b{i}"] = np.zeros(b)
        n_layers = len(dims) - 1
        self.bias_keys = tuple(f"b{i}" for i in range(n_layers))
        self.output_bias_key = f"b{n_layers - 1}"

    @classmethod
    def preset(cls, name: str, in_dim: int = 784, n_classes: int = 10, rng=None):
        width = MLP_PRESETS[name]
        return cls([in_dim, width, width, n_classes], dropout_prob=0.5, rng=rng)

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def forward(self, X, training=False, rng=None):
        X = self._check_input(X)
        cache = ForwardCache(id(self), X.shape[0], training)
        a = X
        last = self.n_layers - 1
        for i in range(self.n_layers):
            if i == last:
                mask = None
                if training and self.dropout_prob > 0.0:
                    if rng is None:
                        raise ValueError("training-mode dropout needs an rng")
                    keep = 1.0 - self.dropout_prob
                    mask = (rng.random(a.shape) < keep) / keep
                    a = a * mask
                cache.masks.append(mask)
            cache.inputs.append(a)
            z = a @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < last:
                cache.pre_acts.append(z)
                a = np.maximum(z, 0.0)
            else:
                a = z
        return a, cache

    def backward(self, cache, out_grad):
        G = self._check_cache(cache, out_grad)
        grads = {}
        delta = G
        for i in reversed(range(self.n_layers)):
            grads[f"W{i}"] = cache.inputs[i].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i == 0:
                break
            delta = delta @ self.params[f"W{i}"].T
            if i == self.n_layers - 1 and cache.masks[0] is not None:
                delta = delta * cache.masks[0]
            delta = delta * (cache.pre_acts[i - 1] > 0)
        return {k: grads[k] for k in self.params}

    def to_dict(self):
        return {
            "kind": self.kind,
            "layer_dims": self.layer_dims,
            "activation": self.activation,
            "dropout_prob": self.dropout_prob,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
        }


def model_from_dict(d: dict) -> Model:
    if d["kind"] == "linear":
        model = LinearModel(d["layer_dims"][0])
    elif d["kind"] == "mlp":
        model = MlpModel(d["layer_dims"], dropout_prob=d["dropout_prob"], activation=d["activation"])
    else:
        raise ValueError(f"unknown model kind {d['kind']!r}")
    for k, spec in d["params"].items():
        if k not in model.params:
            raise ValueError(f"unexpected parameter {k!r}")
        model.params[k][...] = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
    return model


def load_model(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))


def forward(model: Model, X, training: bool = False, rng=None):
    return model.forward(X, training=training, rng=rng)


def backward(model: Model, cache: ForwardCache, out_grad) -> dict:
    return model.backward(cache, out_grad)


def predict(model: Model, X) -> np.ndarray:
    return model.predict(X)


def softmax(logits) -> np.ndarray:
    Z = np.asarray(logits, dtype=np.float64)
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def softmax_residual(logits, labels) -> np.ndarray:
    """one_hot(labels) - softmax(logits), row by row."""
    logits = np.asarray(logits, dtype=np.float64)
    return one_hot(labels, logits.shape[1]) - softmax(logits)


def softmax_residual_vjp(logits, residual_grad) -> np.ndarray:
    """Pull a gradient w.r.t. softmax residuals back to the logits.

    r = y - softmax(z), so dL/dz = -(s * g - s * <s, g>) per row.
    """
    s = softmax(logits)
    g = np.asarray(residual_grad, dtype=np.float64)
    return -(s * g - s * np.sum(s * g, axis=1, keepdims=True))
