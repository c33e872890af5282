"""Small tanh MLP with reverse-mode gradients, Adam and soft target updates.

Parameters are treated as immutable values: every update returns a new
``NetworkParams``. Weights are stored as ``(fan_in, fan_out)`` so a layer
computes ``x @ W + b``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"RQF1"


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed."""


@dataclass(frozen=True)
class NetworkParams:
    """Ordered ``(weight, bias)`` pairs. Hidden layers use tanh, the output is linear.

    The same container carries gradients and Adam moments.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w, _ in self.layers]

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer]

    def map(self, fn) -> "NetworkParams":
        return NetworkParams(tuple((fn(w), fn(b)) for w, b in self.layers))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])


def _check_same_shapes(a: NetworkParams, b: NetworkParams, what: str) -> None:
    if len(a.layers) != len(b.layers) or any(
        wa.shape != wb.shape or ba.shape != bb.shape
        for (wa, ba), (wb, bb) in zip(a.layers, b.layers)
    ):
        raise ValueError(f"{what} mismatch: {a.shapes} vs {b.shapes}")


def init_network(
    input_dim: int, hidden: Sequence[int], output_dim: int, rng: np.random.Generator
) -> NetworkParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    dims = [input_dim, *hidden, output_dim]
    if any(int(d) != d or d < 1 for d in dims):
        raise ValueError(f"all layer sizes must be positive integers, got {dims}")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return NetworkParams(tuple(layers))


def _forward_cache(params: NetworkParams, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def _check_input(params: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.input_dim:
        raise ValueError(
            f"input dimension mismatch: network expects {params.input_dim}, got shape {x.shape}"
        )
    return x


def forward(params: NetworkParams, x) -> np.ndarray:
    """Evaluate the network on one input vector or a ``(batch, input_dim)`` array."""
    x = _check_input(params, x)
    return _forward_cache(params, x)[-1]


def forward_with_cache(params: NetworkParams, x) -> tuple[np.ndarray, list[np.ndarray]]:
    x = _check_input(params, x)
    acts = _forward_cache(params, x)
    return acts[-1], acts


def backward(params: NetworkParams, acts: list[np.ndarray], upstream) -> NetworkParams:
    """Gradient of ``sum(upstream * output)`` given cached activations.

    For batched input the per-sample gradients are summed; callers fold any
    averaging into ``upstream``.
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != acts[-1].shape:
        raise ValueError(f"upstream shape {g.shape} does not match output shape {acts[-1].shape}")
    batched = g.ndim == 2
    grads = []
    n = len(params.layers)
    for i in range(n - 1, -1, -1):
        w, _ = params.layers[i]
        a_in = acts[i]
        if batched:
            gw = a_in.T @ g
            gb = g.sum(axis=0)
        else:
            gw = np.outer(a_in, g)
            gb = g.copy()
        grads.append((gw, gb))
        if i > 0:
            g = (g @ w.T) * (1.0 - acts[i] ** 2)
    return NetworkParams(tuple(reversed(grads)))


def gradients(params: NetworkParams, x, upstream) -> NetworkParams:
    """Exact gradient of ``dot(upstream, forward(params, x))`` w.r.t. every parameter."""
    _, acts = forward_with_cache(params, x)
    return backward(params, acts, upstream)


@dataclass(frozen=True)
class AdamState:
    m: NetworkParams
    v: NetworkParams
    step: int = 0

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "AdamState":
        return cls(params.map(np.zeros_like), params.map(np.zeros_like), 0)


def adam_step(
    params: NetworkParams,
    state: AdamState,
    grads: NetworkParams,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[NetworkParams, AdamState]:
    _check_same_shapes(params, grads, "gradient shape")
    _check_same_shapes(params, state.m, "optimizer state shape")
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_p, new_m, new_v = [], [], []
    for (w, b), (gw, gb), (mw, mb), (vw, vb) in zip(
        params.layers, grads.layers, state.m.layers, state.v.layers
    ):
        pair_p, pair_m, pair_v = [], [], []
        for p, g, m, v in ((w, gw, mw, vw), (b, gb, mb, vb)):
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * g * g
            pair_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
            pair_m.append(m)
            pair_v.append(v)
        new_p.append(tuple(pair_p))
        new_m.append(tuple(pair_m))
        new_v.append(tuple(pair_v))
    return NetworkParams(tuple(new_p)), AdamState(
        NetworkParams(tuple(new_m)), NetworkParams(tuple(new_v)), t
    )


def soft_update(target: NetworkParams, prediction: NetworkParams, tau: float) -> NetworkParams:
    """Blend target toward prediction: ``tau * prediction + (1 - tau) * target``."""
    _check_same_shapes(target, prediction, "architecture")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return NetworkParams(
        tuple(
            (tau * wp + (1.0 - tau) * wt, tau * bp + (1.0 - tau) * bt)
            for (wt, bt), (wp, bp) in zip(target.layers, prediction.layers)
        )
    )


# -- checkpoint I/O ---------------------------------------------------------
#
# Layout (little-endian):
#   b"RQF1", u32 network count, then for each network:
#   u32 layer count, (u32 rows, u32 cols) per layer,
#   f64 weights of every layer (row-major), f64 biases of every layer.


def dumps_checkpoint(nets: Sequence[NetworkParams]) -> bytes:
    out = [MAGIC, struct.pack("<I", len(nets))]
    for net in nets:
        out.append(struct.pack("<I", len(net.layers)))
        for w, _ in net.layers:
            out.append(struct.pack("<II", *w.shape))
        for w, _ in net.layers:
            out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        for _, b in net.layers:
            out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(out)


def loads_checkpoint(data: bytes) -> list[NetworkParams]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}, expected {MAGIC!r}")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("checkpoint truncated")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (n_nets,) = struct.unpack("<I", take(4))
    nets = []
    for _ in range(n_nets):
        (n_layers,) = struct.unpack("<I", take(4))
        shapes = [struct.unpack("<II", take(8)) for _ in range(n_layers)]
        ws = [
            np.frombuffer(take(8 * r * c), dtype="<f8").reshape(r, c).astype(np.float64)
            for r, c in shapes
        ]
        bs = [np.frombuffer(take(8 * c), dtype="<f8").astype(np.float64) for _, c in shapes]
        nets.append(NetworkParams(tuple(zip(ws, bs))))
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after checkpoint payload")
    return nets


def save_checkpoint(path, nets: Sequence[NetworkParams]) -> None:
    Path(path).write_bytes(dumps_checkpoint(nets))


def load_checkpoint(path) -> list[NetworkParams]:
    return loads_checkpoint(Path(path).read_bytes())
