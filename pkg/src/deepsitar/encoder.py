"""Fully connected encoder mapping a measurement vector to three effects.

Hand-written forward and reverse passes over dense layers with tanh hidden
activations and a linear 3-unit output.  Inputs are standardized per
time-point with training-split statistics; raw heights would otherwise
saturate the tanh units.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "linear")


class InvalidDims(Exception):
    pass


class DimMismatch(Exception):
    pass


@dataclass
class Layer:
    weights: np.ndarray   # (out, in)
    biases: np.ndarray    # (out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidDims(f"unknown activation {self.activation!r}")


@dataclass
class EncoderNet:
    layers: list[Layer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def dims(self) -> list[int]:
        return [self.input_dim] + [lay.weights.shape[0] for lay in self.layers]

    def n_params(self) -> int:
        return sum(lay.weights.size + lay.biases.size for lay in self.layers)


@dataclass
class Standardizer:
    mean: np.ndarray
    sd: np.ndarray

    @staticmethod
    def fit(rows: np.ndarray) -> "Standardizer":
        rows = np.asarray(rows, dtype=float)
        mean = rows.mean(axis=0)
        sd = rows.std(axis=0, ddof=0)
        sd = np.where(sd > 0.0, sd, 1.0)
        return Standardizer(mean=mean, sd=sd)

    @staticmethod
    def identity(dim: int) -> "Standardizer":
        return Standardizer(mean=np.zeros(dim), sd=np.ones(dim))

    def apply(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows, dtype=float) - self.mean) / self.sd


def init_encoder(dims, rng: np.random.Generator) -> EncoderNet:
    """Glorot-uniform weights, zero biases, tanh hidden / linear output."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise InvalidDims("need at least input and output dims")
    if dims[-1] != 3:
        raise InvalidDims(f"output dim must be 3, got {dims[-1]}")
    if any(d < 1 for d in dims):
        raise InvalidDims(f"all dims must be >= 1, got {dims}")
    layers = []
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = "linear" if k == len(dims) - 2 else "tanh"
        layers.append(Layer(weights=weights, biases=np.zeros(fan_out), activation=act))
    return EncoderNet(layers=layers)


def forward_batch(net: EncoderNet, x: np.ndarray):
    """Propagate (N, input_dim) rows; returns outputs and per-layer caches."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimMismatch(f"input shape {x.shape} vs input_dim {net.input_dim}")
    caches = []
    a = x
    for lay in net.layers:
        z = a @ lay.weights.T + lay.biases
        out = np.tanh(z) if lay.activation == "tanh" else z
        caches.append((a, out))
        a = out
    return a, caches


def backward_batch(net: EncoderNet, caches, upstream: np.ndarray):
    """Gradients of sum_i <upstream_i, net(x_i)> w.r.t. every weight and bias.

    Returns a list of (d_weights, d_biases) aligned with net.layers.
    """
    grad = np.asarray(upstream, dtype=float)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        lay = net.layers[k]
        a_in, out = caches[k]
        if lay.activation == "tanh":
            grad = grad * (1.0 - out * out)
        grads[k] = (grad.T @ a_in, grad.sum(axis=0))
        if k > 0:
            grad = grad @ lay.weights
    return grads


def encode(net: EncoderNet, std: Standardizer, y) -> np.ndarray:
    """Random effects (a1, b1, c1) for one measurement vector."""
    y = np.asarray(y, dtype=float)
    if y.shape != (net.input_dim,):
        raise DimMismatch(f"measurement shape {y.shape} vs input_dim {net.input_dim}")
    out, _ = forward_batch(net, std.apply(y)[None, :])
    return out[0]


def encode_backward(net: EncoderNet, std: Standardizer, y, upstream):
    """Parameter gradients of <upstream, encode(y)> for one individual."""
    y = np.asarray(y, dtype=float)
    if y.shape != (net.input_dim,):
        raise DimMismatch(f"measurement shape {y.shape} vs input_dim {net.input_dim}")
    upstream = np.asarray(upstream, dtype=float)
    if not np.all(np.isfinite(upstream)):
        raise ValueError("upstream gradient must be finite")
    _, caches = forward_batch(net, std.apply(y)[None, :])
    return backward_batch(net, caches, upstream[None, :])


def flatten_params(net: EncoderNet) -> np.ndarray:
    return np.concatenate(
        [np.concatenate([lay.weights.ravel(), lay.biases]) for lay in net.layers]
    )


def set_params(net: EncoderNet, flat: np.ndarray) -> None:
    pos = 0
    for lay in net.layers:
        n_w = lay.weights.size
        lay.weights = flat[pos : pos + n_w].reshape(lay.weights.shape).copy()
        pos += n_w
        n_b = lay.biases.size
        lay.biases = flat[pos : pos + n_b].copy()
        pos += n_b
    if pos != flat.size:
        raise DimMismatch(f"flat vector size {flat.size}, expected {pos}")


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
