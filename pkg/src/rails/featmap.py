"""Dense ReLU classifier used as a stack of feature maps.

A network with L dense layers exposes L+1 feature layers: layer 0 is the
raw input, layer l (1 <= l <= L) is the post-activation output of the l-th
dense layer.  The final layer emits logits (no activation).  Weights are
held in float64 in memory and stored as float32 on disk, so a load/save
round trip is byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .numerics import derive_stream

ACTIVATION_NONE = 0
ACTIVATION_RELU = 1

_MAGIC = b"RAILSNET"


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in), float64
    bias: np.ndarray     # (out,), float64
    activation: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise DataError("layer weights must be a 2-D matrix")
        if self.bias.shape != (self.weights.shape[0],):
            raise DataError("bias length must match weight rows")
        if self.activation not in (ACTIVATION_NONE, ACTIVATION_RELU):
            raise DataError(f"unknown activation code {self.activation}")


class FeatureNetwork:
    """Fully connected network; exposes per-layer features and input gradients."""

    def __init__(self, layers: Sequence[DenseLayer]):
        layers = list(layers)
        if not layers:
            raise DataError("network needs at least one dense layer")
        for prev, cur in zip(layers, layers[1:]):
            if cur.weights.shape[1] != prev.weights.shape[0]:
                raise DataError(
                    f"layer widths do not chain: {prev.weights.shape[0]} "
                    f"-> {cur.weights.shape[1]}")
        self.layers = layers

    @property
    def depth(self) -> int:
        """Number of dense layers L; feature layers run 0..L."""
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def class_count(self) -> int:
        return self.layers[-1].weights.shape[0]

    def feature_layers(self) -> tuple[int, ...]:
        """Default feature layers: the input plus every hidden layer."""
        return tuple(range(self.depth))

    def layer_width(self, layer: int) -> int:
        if layer == 0:
            return self.input_dim
        return self.layers[layer - 1].weights.shape[0]

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.input_dim:
            raise DataError(
                f"input has trailing dimension {x.shape[-1] if x.ndim else 0}, "
                f"expected {self.input_dim}")
        if not np.all(np.isfinite(x)):
            raise DataError("input contains non-finite values")
        return x

    def forward_activations(self, x: np.ndarray,
                            layers: Iterable[int]) -> dict[int, np.ndarray]:
        """Post-activation features at the requested layers.

        x may be a single vector (d,) or a batch (m, d); outputs keep the
        leading batch axis.  Layer 0 is the input itself.
        """
        wanted = sorted(set(int(l) for l in layers))
        if not wanted:
            raise ConfigError("no feature layers requested")
        if wanted[0] < 0 or wanted[-1] > self.depth:
            raise ConfigError(
                f"feature layers must lie in [0, {self.depth}], got {wanted}")
        x = self._check_input(x)
        out: dict[int, np.ndarray] = {}
        h = x
        if 0 in wanted:
            out[0] = x.copy()
        for i, layer in enumerate(self.layers[:wanted[-1]], start=1):
            h = h @ layer.weights.T + layer.bias
            if layer.activation == ACTIVATION_RELU:
                h = np.maximum(h, 0.0)
            if i in wanted:
                out[i] = h
        return out

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward_activations(x, [self.depth])[self.depth]

    def predict_labels(self, x: np.ndarray) -> np.ndarray:
        """Argmax class per row; ties resolve to the smallest class index."""
        z = self.logits(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return np.argmax(z, axis=1)

    def _forward_full(self, x: np.ndarray) -> list[np.ndarray]:
        """Pre-activation values per dense layer, for backprop."""
        pre = []
        h = x
        for layer in self.layers:
            z = h @ layer.weights.T + layer.bias
            pre.append(z)
            h = np.maximum(z, 0.0) if layer.activation == ACTIVATION_RELU else z
        return pre

    def loss(self, x: np.ndarray, y: np.ndarray | int) -> np.ndarray | float:
        """Cross-entropy of softmax(logits) against integer labels.

        Returns a scalar for a single input, a per-row array for a batch.
        """
        x = self._check_input(x)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        yb = np.atleast_1d(np.asarray(y, dtype=np.int64))
        if yb.shape[0] != xb.shape[0]:
            raise DataError("label count does not match input rows")
        if np.any(yb < 0) or np.any(yb >= self.class_count):
            raise DataError("labels out of range for this network")
        z = self.logits(xb)
        zmax = np.max(z, axis=1, keepdims=True)
        logsum = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
        losses = logsum - z[np.arange(xb.shape[0]), yb]
        return float(losses[0]) if single else losses

    def loss_gradient(self, x: np.ndarray, y: np.ndarray | int) -> np.ndarray:
        """Gradient of the per-sample cross-entropy with respect to the input."""
        x = self._check_input(x)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        yb = np.atleast_1d(np.asarray(y, dtype=np.int64))
        if yb.shape[0] != xb.shape[0]:
            raise DataError("label count does not match input rows")
        if np.any(yb < 0) or np.any(yb >= self.class_count):
            raise DataError("labels out of range for this network")
        pre = self._forward_full(xb)
        z = pre[-1]
        zmax = np.max(z, axis=1, keepdims=True)
        ez = np.exp(z - zmax)
        delta = ez / np.sum(ez, axis=1, keepdims=True)
        delta[np.arange(xb.shape[0]), yb] -= 1.0
        for i in range(self.depth - 1, -1, -1):
            layer = self.layers[i]
            if layer.activation == ACTIVATION_RELU:
                delta = delta * (pre[i] > 0.0)
            delta = delta @ layer.weights
        return delta[0] if single else delta


def _glorot(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_network(arch: Sequence[int], seed: int) -> FeatureNetwork:
    """Glorot-uniform weights, zero biases; ReLU everywhere but the last layer."""
    arch = [int(w) for w in arch]
    if len(arch) < 2:
        raise ConfigError("arch needs at least input and output widths")
    if any(w < 1 for w in arch):
        raise ConfigError(f"arch widths must be positive, got {arch}")
    rng = derive_stream(seed, 0, "weight-init")
    layers = []
    for i in range(len(arch) - 1):
        act = ACTIVATION_NONE if i == len(arch) - 2 else ACTIVATION_RELU
        layers.append(DenseLayer(
            weights=_glorot(arch[i + 1], arch[i], rng),
            bias=np.zeros(arch[i + 1]),
            activation=act))
    return FeatureNetwork(layers)


def _unpack_training_data(train) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(train, "vectors") and hasattr(train, "labels"):
        return train.vectors, train.labels
    vectors, labels = train
    return np.asarray(vectors, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def train_network(train, arch: Sequence[int], epochs: int, learning_rate: float,
                  seed: int, batch_size: int = 32) -> FeatureNetwork:
    """Minibatch SGD on softmax cross-entropy.

    train is a Dataset or a (vectors, labels) pair.  arch is the full width
    chain from input dimension to class count; it must match the data.
    epochs=0 returns the freshly initialized network.
    """
    vectors, labels = _unpack_training_data(train)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise DataError("training vectors must be a non-empty (n, d) matrix")
    if labels.shape != (vectors.shape[0],):
        raise DataError("training labels must align with vectors")
    if epochs < 0:
        raise ConfigError("epochs must be non-negative")
    if learning_rate <= 0:
        raise ConfigError("learning rate must be positive")
    if batch_size < 1:
        raise ConfigError("batch size must be at least 1")
    arch = [int(w) for w in arch]
    if arch[0] != vectors.shape[1]:
        raise ConfigError(
            f"arch input width {arch[0]} does not match data dimension "
            f"{vectors.shape[1]}")
    if np.any(labels < 0) or np.any(labels >= arch[-1]):
        raise DataError("training labels out of range for arch output width")

    net = init_network(arch, seed)
    shuffle = derive_stream(seed, 0, "batch-shuffle")
    n = vectors.shape[0]
    for _ in range(epochs):
        order = shuffle.permutation(n)
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            _sgd_step(net, vectors[rows], labels[rows], learning_rate)
    return net


def _sgd_step(net: FeatureNetwork, xb: np.ndarray, yb: np.ndarray,
              learning_rate: float) -> None:
    acts = [xb]
    pre = []
    h = xb
    for layer in net.layers:
        z = h @ layer.weights.T + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == ACTIVATION_RELU else z
        acts.append(h)
    z = pre[-1]
    zmax = np.max(z, axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    delta = ez / np.sum(ez, axis=1, keepdims=True)
    delta[np.arange(xb.shape[0]), yb] -= 1.0
    m = xb.shape[0]
    for i in range(net.depth - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == ACTIVATION_RELU:
            delta = delta * (pre[i] > 0.0)
        grad_w = delta.T @ acts[i] / m
        grad_b = np.mean(delta, axis=0)
        delta = delta @ layer.weights
        layer.weights -= learning_rate * grad_w
        layer.bias -= learning_rate * grad_b


def save_weights(net: FeatureNetwork, path: str) -> None:
    """Write the network in the RAILSNET container (little-endian, float32)."""
    parts = [_MAGIC, struct.pack("<I", net.depth)]
    for layer in net.layers:
        rows, cols = layer.weights.shape
        parts.append(struct.pack("<IIB", rows, cols, layer.activation))
        parts.append(layer.weights.astype("<f4").tobytes())
        parts.append(layer.bias.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError(
                f"{self.path}: truncated, needed {n} bytes at offset {self.offset}")
        chunk = self.blob[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def done(self) -> None:
        if self.offset != len(self.blob):
            raise FormatError(
                f"{self.path}: {len(self.blob) - self.offset} trailing bytes")


def load_weights(path: str) -> FeatureNetwork:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read(), path)
    if rd.take(len(_MAGIC)) != _MAGIC:
        raise FormatError(f"{path}: bad magic, not a RAILSNET file")
    (count,) = struct.unpack("<I", rd.take(4))
    if count == 0:
        raise FormatError(f"{path}: zero layers")
    layers = []
    for i in range(count):
        rows, cols, act = struct.unpack("<IIB", rd.take(9))
        if rows == 0 or cols == 0:
            raise FormatError(f"{path}: layer {i} has empty shape {rows}x{cols}")
        if act not in (ACTIVATION_NONE, ACTIVATION_RELU):
            raise FormatError(f"{path}: layer {i} has unknown activation {act}")
        w = np.frombuffer(rd.take(4 * rows * cols), dtype="<f4")
        b = np.frombuffer(rd.take(4 * rows), dtype="<f4")
        layers.append(DenseLayer(
            weights=w.astype(np.float64).reshape(rows, cols),
            bias=b.astype(np.float64),
            activation=act))
    rd.done()
    try:
        return FeatureNetwork(layers)
    except DataError as exc:
        raise FormatError(f"{path}: {exc}") from exc
