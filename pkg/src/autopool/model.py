"""Instance predictors: a linear layer or a one-hidden-layer ReLU network,
each followed by a per-class sigmoid.

Parameters live in an ordered dict of named arrays (``W0``, ``b0`` and, for
the MLP, ``W1``, ``b1``) so the optimizer can treat them uniformly.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError

ARCHITECTURES = ("linear", "mlp")
CHECKPOINT_FORMAT = "autopool-checkpoint"


@dataclass
class ModelParams:
    architecture: str
    arrays: dict
    hidden: int | None = None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise InvalidInputError(f"unknown architecture {self.architecture!r}")

    @property
    def n_layers(self):
        return 1 if self.architecture == "linear" else 2

    @property
    def input_dim(self):
        return self.arrays["W0"].shape[0]

    @property
    def num_classes(self):
        return self.arrays[f"W{self.n_layers - 1}"].shape[1]

    def copy(self):
        return ModelParams(self.architecture, {k: v.copy() for k, v in self.arrays.items()}, self.hidden)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    activations: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)
    outputs: np.ndarray | None = None


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(architecture, input_dim, num_classes, seed, hidden=16):
    """Zero-mean Gaussian weights scaled by fan-in; all biases zero.

    ReLU layers use variance ``2 / fan_in``, the sigmoid output layer
    ``1 / fan_in``.
    """
    if input_dim < 1 or num_classes < 1:
        raise InvalidInputError("input_dim and num_classes must be >= 1")
    rng = np.random.default_rng(seed)
    if architecture == "linear":
        widths = [input_dim, num_classes]
        hidden = None
    elif architecture == "mlp":
        if hidden is None or hidden < 1:
            raise InvalidInputError("mlp needs hidden >= 1")
        widths = [input_dim, hidden, num_classes]
    else:
        raise InvalidInputError(f"unknown architecture {architecture!r}")
    arrays = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        gain = 2.0 if i < len(widths) - 2 else 1.0
        arrays[f"W{i}"] = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))
        arrays[f"b{i}"] = np.zeros(fan_out)
    return ModelParams(architecture, arrays, hidden)


def model_forward(params, features):
    """Per-instance class probabilities for an ``(m, d)`` or ``(B, m, d)`` input."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[-1] != params.input_dim:
        raise InvalidInputError(
            f"features of shape {x.shape} do not match input_dim {params.input_dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("features must be finite")
    cache = ForwardCache(inputs=x)
    h = x
    for i in range(params.n_layers):
        z = h @ params.arrays[f"W{i}"] + params.arrays[f"b{i}"]
        cache.pre_activations.append(z)
        h = np.maximum(z, 0.0) if i < params.n_layers - 1 else sigmoid(z)
        cache.activations.append(h)
    cache.outputs = h
    return h, cache


def model_backward(params, cache, upstream):
    """Gradients of every parameter given dLoss/dprobabilities."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.outputs.shape:
        raise InvalidInputError(
            f"upstream shape {upstream.shape} != output shape {cache.outputs.shape}")
    grads = {}
    s = cache.outputs
    delta = upstream * s * (1.0 - s)
    for i in reversed(range(params.n_layers)):
        h_in = cache.inputs if i == 0 else cache.activations[i - 1]
        h2 = h_in.reshape(-1, h_in.shape[-1])
        d2 = delta.reshape(-1, delta.shape[-1])
        grads[f"W{i}"] = h2.T @ d2
        grads[f"b{i}"] = d2.sum(axis=0)
        if i > 0:
            delta = (delta @ params.arrays[f"W{i}"].T) * (cache.pre_activations[i - 1] > 0)
    return {k: grads[k] for k in params.arrays}


def _encode_array(key, a):
    a = np.asarray(a, dtype=np.float64)
    return {"key": key, "shape": list(a.shape), "values": [float(v) for v in a.ravel()]}


def _decode_array(entry):
    return np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])


def save_checkpoint(path, params, alpha=None, operator=None, class_names=None, meta=None):
    """Write parameters (and optionally the learned alpha) as a JSON document.

    Floats are written with ``repr`` precision so a reload is bit-identical.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "architecture": params.architecture,
        "hidden": params.hidden,
        "input_dim": params.input_dim,
        "num_classes": params.num_classes,
        "arrays": [_encode_array(k, v) for k, v in params.arrays.items()],
        "alpha": None if alpha is None else [float(v) for v in np.asarray(alpha).ravel()],
        "operator": None if operator is None else str(operator),
        "class_names": None if class_names is None else list(class_names),
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=True)
        fh.write("\n")


def load_checkpoint(path):
    """Return ``(params, doc)``, where ``doc`` is the full decoded document."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError(f"{path} is not an autopool checkpoint")
    arrays = {e["key"]: _decode_array(e) for e in doc["arrays"]}
    return ModelParams(doc["architecture"], arrays, doc.get("hidden")), doc
