"""Fully connected tanh networks used as unknown-function surrogates.

Parameters live in one flat vector: for each layer the weight matrix
(``n_out x n_in``, row-major) followed by its bias vector. Hidden layers use
tanh, the output layer is affine, optionally squashed to ``(tanh(z)+1)/2``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class MLP:
    layer_sizes: tuple[int, ...]
    output_squash: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 2 or self.layer_sizes[0] != 1 or min(self.layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {self.layer_sizes}")

    @classmethod
    def build(cls, hidden_layers: int, width: int = 20, n_out: int = 2, **kw) -> "MLP":
        return cls((1,) + (width,) * hidden_layers + (n_out,), **kw)

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def _slices(self):
        off = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = (off, off + n_in * n_out, (n_out, n_in))
            off += n_in * n_out
            b = (off, off + n_out)
            off += n_out
            yield w, b

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        return [(theta[w0:w1].reshape(shape), theta[b0:b1]) for (w0, w1, shape), (b0, b1) in self._slices()]


def forward(mlp: MLP, theta, u) -> np.ndarray:
    """Network outputs for a batch of scalar inputs, shape ``(len(u), n_out)``."""
    h = np.atleast_1d(np.asarray(u, dtype=float))[None, :]
    layers = mlp.unpack(theta)
    for k, (W, b) in enumerate(layers):
        z = W @ h + b[:, None]
        h = np.tanh(z) if k < len(layers) - 1 else z
    if mlp.output_squash:
        h = 0.5 * (np.tanh(h) + 1.0)
    return h.T


def forward_and_input_derivative(mlp: MLP, theta, u) -> tuple[np.ndarray, np.ndarray]:
    """Outputs and their derivatives with respect to the scalar input."""
    h = np.atleast_1d(np.asarray(u, dtype=float))[None, :]
    dh = np.ones_like(h)
    layers = mlp.unpack(theta)
    for k, (W, b) in enumerate(layers):
        z = W @ h + b[:, None]
        dz = W @ dh
        if k < len(layers) - 1:
            h = np.tanh(z)
            dh = (1.0 - h * h) * dz
        else:
            h, dh = z, dz
    if mlp.output_squash:
        t = np.tanh(h)
        h, dh = 0.5 * (t + 1.0), 0.5 * (1.0 - t * t) * dh
    return h.T, dh.T


def input_derivative(mlp: MLP, theta, u) -> np.ndarray:
    return forward_and_input_derivative(mlp, theta, u)[1]


def forward_on_tape(mlp: MLP, theta: ad.Var, u) -> list[ad.Var]:
    """Record the forward pass with ``theta`` on the tape; ``u`` is constant.

    Returns one Var per network output, each of shape ``(len(u),)``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    h = theta.tape.constant(u[None, :])
    n_layers = len(mlp.layer_sizes) - 1
    for k, ((w0, w1, shape), (b0, b1)) in enumerate(mlp._slices()):
        W = ad.gather(theta, np.arange(w0, w1).reshape(shape))
        b = ad.gather(theta, np.arange(b0, b1)[:, None])
        h = ad.matvec(W, h) + b
        if k < n_layers - 1:
            h = ad.tanh(h)
    if mlp.output_squash:
        h = 0.5 * (ad.tanh(h) + 1.0)
    B = u.shape[0]
    return [ad.gather(h, np.arange(B) + r * B) for r in range(mlp.n_out)]


def init_params(mlp: MLP, seed: int, output_bias: float = 0.0) -> np.ndarray:
    """Glorot-uniform weights, zero biases (output biases set to ``output_bias``)."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(mlp.n_params)
    slices = list(mlp._slices())
    for k, ((w0, w1, (n_out, n_in)), (b0, b1)) in enumerate(slices):
        limit = np.sqrt(6.0 / (n_in + n_out))
        theta[w0:w1] = rng.uniform(-limit, limit, size=w1 - w0)
        if k == len(slices) - 1:
            theta[b0:b1] = output_bias
    return theta


def save_params(path, theta) -> None:
    """Write ``theta`` as a JSON array (``.json``) or raw little-endian float64."""
    path = Path(path)
    theta = np.asarray(theta, dtype=float)
    if path.suffix == ".json":
        path.write_text(json.dumps([float(t) for t in theta]))
    else:
        path.write_bytes(theta.astype("<f8").tobytes())


def load_params(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".json":
        return np.asarray(json.loads(path.read_text()), dtype=float)
    return np.frombuffer(path.read_bytes(), dtype="<f8").copy()
