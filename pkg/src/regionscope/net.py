"""ReLU multilayer perceptrons with manual reverse-mode gradients.

Matrices are float64 numpy arrays in row-major layout. A network is an
ordered list of affine layers, each optionally followed by a ReLU. Units
whose preactivation is strictly positive are active; zero counts as
inactive.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    relu: bool = True

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} rows"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NumericError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class MlpNetwork:
    layers: list[Layer]
    # bumped on every in-place parameter update so stale caches can be detected
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise ShapeError(
                    f"layer {i} expects {self.layers[i].in_dim} inputs but layer "
                    f"{i - 1} emits {self.layers[i - 1].out_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim if self.layers else 0

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim if self.layers else 0

    @property
    def hidden_widths(self) -> list[int]:
        """Widths of the layers followed by a ReLU, in order."""
        return [layer.out_dim for layer in self.layers if layer.relu]

    @property
    def n_hidden(self) -> int:
        return sum(self.hidden_widths)

    @property
    def sizes(self) -> list[int]:
        if not self.layers:
            return []
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...] of the live parameter arrays."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(copy.deepcopy(self.layers))

    def bump(self) -> None:
        self.version += 1


def param_count(net: MlpNetwork) -> int:
    return sum(layer.weights.size + layer.bias.size for layer in net.layers)


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    relu_last: bool = False,
) -> MlpNetwork:
    """Build an MLP with fan-in scaled uniform initialisation.

    Weights and biases are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    the default used by common deep-learning frameworks for dense layers.
    Every layer but the last gets a ReLU unless ``relu_last`` is set.
    """
    if len(sizes) < 2:
        raise ShapeError("an MLP needs at least an input and an output size")
    layers = []
    n = len(sizes) - 1
    for i in range(n):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append(Layer(w, b, relu=(i < n - 1) or relu_last))
    return MlpNetwork(layers)


@dataclass(frozen=True, order=True)
class ActivationPattern:
    """Packed on/off state of every hidden ReLU unit, layer-major.

    Packing is big-endian within each byte, so ordering by ``packed``
    is lexicographic ordering of the bit sequence.
    """

    packed: bytes
    length: int

    @classmethod
    def from_bools(cls, bits: np.ndarray) -> "ActivationPattern":
        bits = np.asarray(bits, dtype=bool).ravel()
        return cls(np.packbits(bits).tobytes(), int(bits.size))

    def bools(self) -> np.ndarray:
        raw = np.frombuffer(self.packed, dtype=np.uint8)
        return np.unpackbits(raw)[: self.length].astype(bool)

    def hex(self) -> str:
        return self.packed.hex()

    @classmethod
    def from_hex(cls, text: str, length: int) -> "ActivationPattern":
        return cls(bytes.fromhex(text), length)

    def __len__(self) -> int:
        return self.length


@dataclass
class AffineMap:
    """x -> A @ x + c."""

    A: np.ndarray
    c: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.A.T + self.c


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer, (N, in)
    preacts: list[np.ndarray]  # preactivation of each layer, (N, out)
    net_id: int
    version: int


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values after {where}")


def forward_batch(net: MlpNetwork, X: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run a batch (N, input_dim) through the network and keep what backward needs."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"expected (N, {net.input_dim}) input, got {X.shape}")
    inputs, preacts = [], []
    h = X
    for i, layer in enumerate(net.layers):
        inputs.append(h)
        with np.errstate(over="ignore", invalid="ignore"):
            z = h @ layer.weights.T + layer.bias
        _check_finite(z, f"layer {i}")
        preacts.append(z)
        h = np.maximum(z, 0.0) if layer.relu else z
    return h, ForwardCache(inputs, preacts, id(net), net.version)


def hidden_bits(net: MlpNetwork, X: np.ndarray) -> np.ndarray:
    """(N, n_hidden) boolean activation states for a batch; no cache kept."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeError(f"expected (N, {net.input_dim}) input, got {X.shape}")
    cols = []
    h = X
    for layer in net.layers:
        z = h @ layer.weights.T + layer.bias
        if layer.relu:
            active = z > 0
            cols.append(active)
            h = np.where(active, z, 0.0)
        else:
            h = z
    if not cols:
        return np.zeros((X.shape[0], 0), dtype=bool)
    return np.concatenate(cols, axis=1)


def embed(net: MlpNetwork, X: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Forward pass without caching, evaluated in chunks to bound memory."""
    X = np.asarray(X, dtype=np.float64)
    outs = []
    for start in range(0, X.shape[0], chunk):
        h = X[start : start + chunk]
        for layer in net.layers:
            h = h @ layer.weights.T + layer.bias
            if layer.relu:
                h = np.maximum(h, 0.0)
        outs.append(h)
    if not outs:
        return np.zeros((0, net.output_dim))
    return np.concatenate(outs, axis=0)


def forward(net: MlpNetwork, x: np.ndarray) -> tuple[np.ndarray, ActivationPattern]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ShapeError(f"expected input of length {net.input_dim}, got shape {x.shape}")
    out, cache = forward_batch(net, x[None, :])
    bits = [z[0] > 0 for z, layer in zip(cache.preacts, net.layers) if layer.relu]
    flat = np.concatenate(bits) if bits else np.zeros(0, dtype=bool)
    return out[0], ActivationPattern.from_bools(flat)


def split_pattern(net: MlpNetwork, pattern: ActivationPattern) -> list[np.ndarray]:
    if len(pattern) != net.n_hidden:
        raise ShapeError(
            f"pattern has {len(pattern)} bits but network has {net.n_hidden} hidden units"
        )
    bits = pattern.bools()
    out, start = [], 0
    for width in net.hidden_widths:
        out.append(bits[start : start + width])
        start += width
    return out


def region_affine(net: MlpNetwork, pattern: ActivationPattern) -> AffineMap:
    """Affine map the network applies on the region carrying ``pattern``."""
    masks = iter(split_pattern(net, pattern))
    A = np.eye(net.input_dim)
    c = np.zeros(net.input_dim)
    for layer in net.layers:
        A = layer.weights @ A
        c = layer.weights @ c + layer.bias
        if layer.relu:
            m = next(masks).astype(np.float64)
            A = A * m[:, None]
            c = c * m
    return AffineMap(A, c)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def backward(net: MlpNetwork, grad_out: np.ndarray, cache: ForwardCache | None) -> Gradients:
    """Backpropagate dLoss/dOutput through a cached forward pass.

    ``grad_out`` has the shape of the batch output. Returns gradients for
    every weight and bias plus dLoss/dInput for chaining into an upstream
    network.
    """
    if cache is None:
        raise ContractError("backward needs the cache from a matching forward_batch call")
    if cache.net_id != id(net) or cache.version != net.version:
        raise ContractError("forward cache is stale: network changed since the forward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != cache.preacts[-1].shape:
        raise ShapeError(f"output gradient shape {g.shape} != output shape {cache.preacts[-1].shape}")
    n = len(net.layers)
    dWs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        layer = net.layers[i]
        if layer.relu:
            g = g * (cache.preacts[i] > 0)
        dWs[i] = g.T @ cache.inputs[i]
        dbs[i] = g.sum(axis=0)
        g = g @ layer.weights
    return Gradients(dWs, dbs, g)


def sgd_step(net: MlpNetwork, grads: Gradients, lr: float, weight_decay: float = 0.0) -> None:
    """In-place SGD with L2 weight decay applied to weights and biases."""
    for layer, dw, db in zip(net.layers, grads.weights, grads.biases):
        if weight_decay:
            dw = dw + weight_decay * layer.weights
            db = db + weight_decay * layer.bias
        layer.weights -= lr * dw
        layer.bias -= lr * db
    for layer in net.layers:
        if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.bias))):
            raise NumericError("parameters became non-finite during the update")
    net.bump()
