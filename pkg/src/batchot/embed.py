"""Fully connected sigmoid embedding network with hand-written backprop.

Each layer computes ``a = sigmoid(a_prev @ W + b)`` with ``W`` stored as a
``(fan_in, fan_out)`` array; the last layer is also a sigmoid, so
embeddings lie in ``(0, 1)^d``.

Checkpoint format (all integers little-endian ``uint32``, floats
little-endian ``float64``)::

    magic        8 bytes  b"BOTNET\\x00\\x00"
    version      uint32   currently 1
    n_sizes      uint32
    layer_sizes  n_sizes x uint32
    per layer:   W row-major (fan_in x fan_out), then b (fan_out)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from batchot.errors import InputError, TraceMismatchError

__all__ = [
    "EmbedNet",
    "ForwardTrace",
    "Gradients",
    "OptimizerConfig",
    "backward",
    "forward",
    "init",
    "load_checkpoint",
    "save_checkpoint",
    "sgd_step",
]

CHECKPOINT_MAGIC = b"BOTNET\x00\x00"
CHECKPOINT_VERSION = 1


@dataclass
class EmbedNet:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    weight_buffers: list[np.ndarray] = field(default_factory=list)
    bias_buffers: list[np.ndarray] = field(default_factory=list)
    # bumped by sgd_step so stale traces can be detected
    version: int = 0

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if not self.weight_buffers:
            self.weight_buffers = [np.zeros_like(w) for w in self.weights]
        if not self.bias_buffers:
            self.bias_buffers = [np.zeros_like(b) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise InputError(f"layer {k} parameters do not match sizes {expected}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def copy(self) -> "EmbedNet":
        return EmbedNet(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [w.copy() for w in self.weight_buffers],
            [b.copy() for b in self.bias_buffers],
            self.version,
        )


@dataclass(frozen=True)
class ForwardTrace:
    """Layer activations kept for the backward pass.

    ``activations[0]`` is the input; ``activations[k + 1]`` is the output of
    layer ``k``.
    """

    activations: tuple[np.ndarray, ...]
    net_id: int
    net_version: int

    @property
    def depth(self) -> int:
        return len(self.activations) - 1


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise InputError("momentum must be in [0, 1)")
        if not self.weight_decay >= 0:
            raise InputError("weight_decay must be >= 0")


def init(layer_sizes, seed: int) -> EmbedNet:
    """Glorot-uniform weights, zero biases, zero momentum buffers."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise InputError("need at least an input and an output size")
    if any(s < 1 for s in sizes):
        raise InputError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EmbedNet(tuple(sizes), weights, biases)


def forward(net: EmbedNet, x) -> tuple[np.ndarray, ForwardTrace]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InputError(f"input shape {x.shape} does not match network input {net.input_dim}")
    if not np.all(np.isfinite(x)):
        raise InputError("input has non-finite entries")
    acts = [x]
    a = x
    for w, b in zip(net.weights, net.biases):
        a = expit(a @ w + b)
        acts.append(a)
    return a, ForwardTrace(tuple(acts), id(net), net.version)


def backward(net: EmbedNet, trace: ForwardTrace, grad_embeddings) -> Gradients:
    """Parameter gradients of ``sum(embeddings * grad_embeddings)``."""
    if trace.net_id != id(net) or trace.net_version != net.version:
        raise TraceMismatchError("trace was produced by a different or since-updated network")
    if trace.depth != net.n_layers:
        raise TraceMismatchError("trace depth does not match network depth")
    grad = np.asarray(grad_embeddings, dtype=np.float64)
    if grad.shape != trace.activations[-1].shape:
        raise InputError(f"upstream gradient shape {grad.shape} != embedding shape {trace.activations[-1].shape}")
    gw = [None] * net.n_layers
    gb = [None] * net.n_layers
    for k in range(net.n_layers - 1, -1, -1):
        out = trace.activations[k + 1]
        delta = grad * out * (1.0 - out)
        gw[k] = trace.activations[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            grad = delta @ net.weights[k].T
    return Gradients(gw, gb)


def sgd_step(net: EmbedNet, grads: Gradients, cfg: OptimizerConfig) -> EmbedNet:
    """In-place momentum SGD; returns ``net`` for chaining."""
    if len(grads.weights) != net.n_layers:
        raise InputError("gradient depth does not match network")
    for k in range(net.n_layers):
        for param, buf, g in (
            (net.weights[k], net.weight_buffers[k], grads.weights[k]),
            (net.biases[k], net.bias_buffers[k], grads.biases[k]),
        ):
            if g.shape != param.shape:
                raise InputError(f"gradient shape {g.shape} != parameter shape {param.shape}")
            buf *= cfg.momentum
            buf += g
            if cfg.weight_decay:
                buf += cfg.weight_decay * param
            param -= cfg.learning_rate * buf
    net.version += 1
    return net


def save_checkpoint(net: EmbedNet, path) -> None:
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(net.layer_sizes)),
        struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes),
    ]
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path) -> EmbedNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: not a batchot checkpoint (bad magic)")
    if len(blob) < 16:
        raise InputError(f"{path}: truncated header")
    version, n_sizes = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    if len(blob) < offset + 4 * n_sizes:
        raise InputError(f"{path}: truncated layer sizes")
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, offset)
    offset += 4 * n_sizes
    expected = offset + 8 * sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    if len(blob) != expected:
        raise InputError(f"{path}: expected {expected} bytes, found {len(blob)}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    return EmbedNet(sizes, weights, biases)
