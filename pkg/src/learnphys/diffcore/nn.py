"""MLP and GRU building blocks over flat parameter dicts.

Parameters are plain ``{path: ndarray}`` mappings.  During training the same
mapping is populated with taped leaves, so every function here accepts either
arrays or tensors.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tape import DTYPE, ShapeError, value_of


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(DTYPE)


def init_mlp(rng, sizes, prefix: str) -> dict[str, np.ndarray]:
    """Weights for an MLP with layer widths ``sizes`` (input first)."""
    params = {}
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}/w{i}"] = glorot(rng, n_in, n_out)
        params[f"{prefix}/b{i}"] = np.zeros(n_out, dtype=DTYPE)
    return params


def mlp_layers(params, prefix: str) -> int:
    n = 0
    while f"{prefix}/w{n}" in params:
        n += 1
    if n == 0:
        raise KeyError(f"no MLP weights under {prefix!r}")
    return n


def mlp_apply(params, x, prefix: str):
    """Affine+ReLU hidden layers, linear output layer."""
    n = mlp_layers(params, prefix)
    width = value_of(params[f"{prefix}/w0"]).shape[0]
    if x.shape[-1] != width:
        raise ShapeError(f"MLP {prefix!r} expects width {width}, got input shape {x.shape}")
    h = x
    for i in range(n):
        h = ops.add(ops.matmul(h, params[f"{prefix}/w{i}"]), params[f"{prefix}/b{i}"])
        if i < n - 1:
            h = ops.relu(h)
    return h


GRU_GATES = ("z", "r", "h")


def init_gru(rng, input_size: int, hidden_size: int, prefix: str) -> dict[str, np.ndarray]:
    params = {}
    for gate in GRU_GATES:
        params[f"{prefix}/w_{gate}"] = glorot(rng, input_size, hidden_size)
        params[f"{prefix}/u_{gate}"] = glorot(rng, hidden_size, hidden_size)
        params[f"{prefix}/b_{gate}"] = np.zeros(hidden_size, dtype=DTYPE)
    return params


def gru_step(params, x, h, prefix: str):
    """One GRU update: h' = (1 - z) * h + z * tanh(Wx + U(r * h) + b)."""
    n_in, n_hidden = value_of(params[f"{prefix}/w_z"]).shape
    if x.shape[-1] != n_in or h.shape[-1] != n_hidden or x.shape[0] != h.shape[0]:
        raise ShapeError(
            f"GRU {prefix!r} expects input width {n_in} and hidden width {n_hidden}, "
            f"got {x.shape} and {h.shape}"
        )

    def pre(gate, hh):
        xw = ops.add(ops.matmul(x, params[f"{prefix}/w_{gate}"]), params[f"{prefix}/b_{gate}"])
        return ops.add(xw, ops.matmul(hh, params[f"{prefix}/u_{gate}"]))

    z = ops.sigmoid(pre("z", h))
    r = ops.sigmoid(pre("r", h))
    cand = ops.tanh(pre("h", ops.mul(r, h)))
    return ops.add(h, ops.mul(z, ops.sub(cand, h)))
