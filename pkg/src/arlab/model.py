"""Bias-free fully-connected ReLU networks with a linear output layer.

``T x = W_L g(W_{L-1} ... g(W_1 x))`` with ``g = ReLU``. Single-sample
functions (``forward``, ``backward``) return traces for inspection; the
``*_batch`` functions operate on row-stacked inputs of shape (n, d) and are
what training and attacks use.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidConfigError, InvalidInputError
from .numerics import SeededRng

CKPT_MAGIC = b"ARL1"


@dataclass
class Network:
    weights: list[np.ndarray]

    def __post_init__(self):
        if not self.weights:
            raise InvalidConfigError("network needs at least one layer")
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        for i, w in enumerate(self.weights):
            if w.ndim != 2 or min(w.shape) < 1:
                raise InvalidConfigError(f"layer {i + 1}: bad weight shape {w.shape}")
            if not np.all(np.isfinite(w)):
                raise InvalidConfigError(f"layer {i + 1}: non-finite weights")
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise InvalidConfigError(
                    f"layer {i + 1} expects {self.weights[i].shape[1]} inputs, "
                    f"layer {i} gives {self.weights[i - 1].shape[0]}"
                )

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def copy(self) -> "Network":
        return Network([w.copy() for w in self.weights])


@dataclass
class ForwardTrace:
    x: np.ndarray
    pre: list[np.ndarray]          # pre-activations of hidden layers 1..L-1
    activations: list[np.ndarray]  # I_1 .. I_{L-1}
    logits: np.ndarray


@dataclass
class ActivationPattern:
    taus: list[np.ndarray]  # 0/1 int8 vector per hidden layer

    def __eq__(self, other):
        return (
            isinstance(other, ActivationPattern)
            and len(self.taus) == len(other.taus)
            and all(np.array_equal(a, b) for a, b in zip(self.taus, other.taus))
        )

    def key(self) -> tuple:
        return tuple(t.tobytes() for t in self.taus)


def init_network(widths, rng: SeededRng) -> Network:
    """Xavier-uniform initialisation, layer i drawn from ``rng.child(i)``."""
    widths = list(widths)
    if len(widths) < 2 or any(int(w) < 1 for w in widths):
        raise InvalidConfigError(f"need >= 2 positive widths, got {widths}")
    weights = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.child(i).uniform(-bound, bound, (fan_out, fan_in)))
    return Network(weights)


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise InvalidInputError(f"input has dimension {x.shape[-1]}, network expects {net.input_dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input has non-finite entries")
    return x


def forward(net: Network, x) -> ForwardTrace:
    x = _check_input(net, x)
    if x.ndim != 1:
        raise InvalidInputError("forward takes a single vector; use logits_batch for batches")
    pre, acts = [], []
    h = x
    for w in net.weights[:-1]:
        z = w @ h
        h = np.maximum(z, 0.0)
        pre.append(z)
        acts.append(h)
    return ForwardTrace(x=x, pre=pre, activations=acts, logits=net.weights[-1] @ h)


def activation_pattern(trace: ForwardTrace) -> ActivationPattern:
    # zero pre-activation counts as inactive
    return ActivationPattern([(z > 0).astype(np.int8) for z in trace.pre])


def pattern_at(net: Network, x) -> ActivationPattern:
    return activation_pattern(forward(net, x))


def induced_matrices(net: Network, pattern: ActivationPattern) -> list[np.ndarray]:
    """``diag(tau_i) W_i`` for hidden layers, ``W_L`` unchanged."""
    if len(pattern.taus) != net.depth - 1:
        raise InvalidInputError(
            f"pattern has {len(pattern.taus)} layers, network has {net.depth - 1} hidden layers"
        )
    out = []
    for w, tau in zip(net.weights[:-1], pattern.taus):
        if tau.shape != (w.shape[0],):
            raise InvalidInputError(f"pattern length {tau.shape} does not match layer rows {w.shape[0]}")
        out.append(w * tau[:, None].astype(np.float64))
    out.append(net.weights[-1].copy())
    return out


def logits_batch(net: Network, X) -> np.ndarray:
    X = _check_input(net, X)
    h = np.atleast_2d(X)
    for w in net.weights[:-1]:
        h = np.maximum(h @ w.T, 0.0)
    return h @ net.weights[-1].T


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(net: Network, y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != n:
        raise InvalidInputError(f"{y.shape[0]} labels for {n} inputs")
    if np.any(y < 0) or np.any(y >= net.output_dim):
        raise InvalidInputError(f"label out of range [0, {net.output_dim})")
    return y


def backward_batch(net: Network, X, y):
    """Cross-entropy gradients for a batch.

    Returns ``(param_grads, input_grads, losses)``: parameter gradients of the
    batch-mean loss, per-sample input gradients of each sample's own loss, and
    the per-sample losses.
    """
    X = np.atleast_2d(_check_input(net, X))
    y = _check_labels(net, y, X.shape[0])
    n = X.shape[0]
    hs = [X]
    for w in net.weights[:-1]:
        hs.append(np.maximum(hs[-1] @ w.T, 0.0))
    logits = hs[-1] @ net.weights[-1].T
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    losses = logsum - shifted[rows, y]
    delta = softmax(logits)
    delta[rows, y] -= 1.0  # d loss_k / d logits_k, per sample
    grads = [None] * net.depth
    for i in range(net.depth - 1, -1, -1):
        grads[i] = delta.T @ hs[i] / n
        delta = delta @ net.weights[i]
        if i > 0:
            delta = delta * (hs[i] > 0)
    return grads, delta, losses


def backward(net: Network, x, y):
    """Single-sample ``(param_grads, input_grad, loss)`` of the cross-entropy loss."""
    x = _check_input(net, x)
    if x.ndim != 1:
        raise InvalidInputError("backward takes a single vector")
    grads, dx, losses = backward_batch(net, x[None, :], [y])
    return grads, dx[0], float(losses[0])


def input_gradients(net: Network, X, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample ``(d loss / d x, loss)`` without forming parameter gradients."""
    X = np.atleast_2d(_check_input(net, X))
    y = _check_labels(net, y, X.shape[0])
    hs = [X]
    for w in net.weights[:-1]:
        hs.append(np.maximum(hs[-1] @ w.T, 0.0))
    logits = hs[-1] @ net.weights[-1].T
    rows = np.arange(X.shape[0])
    shifted = logits - logits.max(axis=1, keepdims=True)
    losses = np.log(np.exp(shifted).sum(axis=1)) - shifted[rows, y]
    delta = softmax(logits)
    delta[rows, y] -= 1.0
    for i in range(net.depth - 1, -1, -1):
        delta = delta @ net.weights[i]
        if i > 0:
            delta = delta * (hs[i] > 0)
    return delta, losses


def logit_difference_gradient(net: Network, x, a: int, b: int) -> tuple[float, np.ndarray]:
    """Value and input gradient of ``logits[a] - logits[b]`` at a single x."""
    x = _check_input(net, x)
    hs = [x]
    for w in net.weights[:-1]:
        hs.append(np.maximum(w @ hs[-1], 0.0))
    logits = net.weights[-1] @ hs[-1]
    g = net.weights[-1][a] - net.weights[-1][b]
    for i in range(net.depth - 2, -1, -1):
        g = (g * (hs[i + 1] > 0)) @ net.weights[i]
    return float(logits[a] - logits[b]), g


# -- checkpoint container -------------------------------------------------

def save_checkpoint(net: Network, path, metadata: dict | None = None) -> None:
    """Write ``ARL1`` binary weights; metadata (if any) goes to ``<path>.json``."""
    path = Path(path)
    parts = [CKPT_MAGIC, struct.pack("<I", net.depth)]
    for w in net.weights:
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    path.write_bytes(b"".join(parts))
    if metadata is not None:
        meta = {"widths": net.widths, **metadata}
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> Network:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: expected magic {CKPT_MAGIC!r}, found {buf[:4]!r}")
    try:
        (depth,) = struct.unpack_from("<I", buf, 4)
        off = 8
        weights = []
        for _ in range(depth):
            rows, cols = struct.unpack_from("<II", buf, off)
            off += 8
            nbytes = rows * cols * 8
            if off + nbytes > len(buf):
                raise FormatError(f"{path}: truncated layer data")
            w = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=off)
            weights.append(w.reshape(rows, cols).astype(np.float64))
            off += nbytes
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
    return Network(weights)


def load_metadata(path) -> dict:
    p = Path(str(path) + ".json")
    return json.loads(p.read_text()) if p.exists() else {}
