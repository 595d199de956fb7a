"""Minimal dense network with manual backprop and momentum SGD.

Everything runs in float64: the detectors downstream compare distributions
of very small cosine and loss differences, and float32 rounding noise would
leak into their statistical tests. Parameters travel between modules as
flat vectors (ParamVector) so that update arithmetic, norms, and
per-coordinate statistics are one-liners.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LayerShape = tuple[int, int, bool]  # (out_dim, in_dim, has_bias)


def flat_length(shapes: tuple[LayerShape, ...]) -> int:
    total = 0
    for rows, cols, has_bias in shapes:
        total += rows * cols + (rows if has_bias else 0)
    return total


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter (or gradient) vector plus the layer shapes it packs.

    Arithmetic partners must carry identical shapes; all operations return
    new vectors. The flat layout is, per layer, the row-major weight matrix
    followed by the bias.
    """

    values: np.ndarray
    shapes: tuple[LayerShape, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"ParamVector values must be 1-D, got shape {v.shape}")
        expected = flat_length(self.shapes)
        if v.size != expected:
            raise ValueError(
                f"ParamVector length {v.size} does not match shapes (expected {expected})"
            )
        object.__setattr__(self, "values", v)

    def _check_partner(self, other: "ParamVector") -> None:
        if self.shapes != other.shapes:
            raise ValueError("ParamVector shape metadata mismatch")

    def __add__(self, other: "ParamVector") -> "ParamVector":
        self._check_partner(other)
        return ParamVector(self.values + other.values, self.shapes)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        self._check_partner(other)
        return ParamVector(self.values - other.values, self.shapes)

    def __mul__(self, k: float) -> "ParamVector":
        return ParamVector(self.values * float(k), self.shapes)

    __rmul__ = __mul__

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.shapes)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def std(self) -> float:
        """Population standard deviation of the coordinates."""
        return float(np.std(self.values))

    @staticmethod
    def zeros(shapes: tuple[LayerShape, ...]) -> "ParamVector":
        return ParamVector(np.zeros(flat_length(shapes)), shapes)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str  # "relu" or "identity"

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)


class DenseNet:
    """Fully connected classifier: hidden relu layers, identity final layer.

    The final layer has one output node per label and feeds a
    softmax-cross-entropy loss. Consecutive layer dimensions must chain.
    """

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ValueError("DenseNet needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weights.shape[0] != nxt.weights.shape[1]:
                raise ValueError("layer dimensions do not chain")
        self.layers = layers

    @classmethod
    def create(cls, layer_sizes: list[int], rng: np.random.Generator) -> "DenseNet":
        """He-initialised net from [input, hidden..., n_labels] sizes."""
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
            last = i == len(layer_sizes) - 2
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            layers.append(
                DenseLayer(w, np.zeros(fan_out), "identity" if last else "relu")
            )
        return cls(layers)

    @property
    def shapes(self) -> tuple[LayerShape, ...]:
        return tuple((l.weights.shape[0], l.weights.shape[1], True) for l in self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def n_labels(self) -> int:
        return self.layers[-1].weights.shape[0]

    def to_vector(self) -> ParamVector:
        chunks = []
        for layer in self.layers:
            chunks.append(layer.weights.ravel())
            chunks.append(layer.bias)
        return ParamVector(np.concatenate(chunks), self.shapes)

    def set_vector(self, pv: ParamVector) -> None:
        if pv.shapes != self.shapes:
            raise ValueError("parameter vector does not match net shapes")
        pos = 0
        for layer in self.layers:
            rows, cols = layer.weights.shape
            layer.weights = pv.values[pos : pos + rows * cols].reshape(rows, cols).copy()
            pos += rows * cols
            layer.bias = pv.values[pos : pos + rows].copy()
            pos += rows

    @classmethod
    def from_vector(cls, pv: ParamVector) -> "DenseNet":
        """Rebuild a net from a flat vector.

        Uses the lab-wide convention: every layer except the last is relu,
        the last is identity (softmax is applied by the loss).
        """
        layers = []
        pos = 0
        n = len(pv.shapes)
        for i, (rows, cols, has_bias) in enumerate(pv.shapes):
            w = pv.values[pos : pos + rows * cols].reshape(rows, cols).copy()
            pos += rows * cols
            b = pv.values[pos : pos + rows].copy() if has_bias else np.zeros(rows)
            pos += rows if has_bias else 0
            layers.append(DenseLayer(w, b, "identity" if i == n - 1 else "relu"))
        return cls(layers)

    def copy(self) -> "DenseNet":
        return DenseNet(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


def forward(net: DenseNet, batch: np.ndarray) -> np.ndarray:
    """Forward pass; returns the logits matrix (one row per sample)."""
    a = np.asarray(batch, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"batch must be 2-D, got shape {a.shape}")
    if a.shape[1] != net.input_dim:
        raise ValueError(
            f"batch feature width {a.shape[1]} does not match input layer width {net.input_dim}"
        )
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return a


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def per_sample_losses(net: DenseNet, batch: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Cross-entropy loss of each sample under the net."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = _log_softmax(forward(net, batch))
    return -logp[np.arange(len(labels)), labels]


def loss_and_grad(
    net: DenseNet, batch: np.ndarray, labels: np.ndarray
) -> tuple[float, ParamVector]:
    """Mean softmax-cross-entropy loss and its exact gradient.

    Backprop is done by hand layer by layer; the returned gradient packs
    into the same flat layout as ``net.to_vector()``.
    """
    x = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch must be a non-empty 2-D array")
    if labels.shape != (x.shape[0],):
        raise ValueError("labels must have one entry per batch row")
    if labels.min() < 0 or labels.max() >= net.n_labels:
        raise ValueError("labels out of range for the output layer")

    # Forward, keeping pre-activations for the relu derivative.
    activations = [x]
    pre = []
    a = x
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        activations.append(a)

    n = x.shape[0]
    logp = _log_softmax(activations[-1])
    loss = float(-logp[np.arange(n), labels].mean())

    delta = np.exp(logp)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        gw = delta.T @ activations[i]
        gb = delta.sum(axis=0)
        grads.append((gw, gb))
        if i > 0:
            delta = delta @ layer.weights
            if net.layers[i - 1].activation == "relu":
                delta = delta * (pre[i - 1] > 0.0)
    grads.reverse()

    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return loss, ParamVector(flat, net.shapes)


def predict(net: DenseNet, batch: np.ndarray) -> np.ndarray:
    return forward(net, batch).argmax(axis=1)


def accuracy(net: DenseNet, batch: np.ndarray, labels: np.ndarray) -> float:
    return float((predict(net, batch) == np.asarray(labels)).mean())


@dataclass
class SgdState:
    """SGD with momentum and (coupled) weight decay.

    Update rule, fixed for reproducibility:
        v <- momentum * v + grad + weight_decay * theta
        theta <- theta - learning_rate * v
    """

    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: ParamVector | None = field(default=None)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def sgd_step(net: DenseNet, grad: ParamVector, opt: SgdState) -> None:
    """One optimizer step, in place on `net` and `opt.velocity`."""
    if grad.shapes != net.shapes:
        raise ValueError("gradient shapes do not match net shapes")
    theta = net.to_vector()
    if opt.velocity is None:
        opt.velocity = ParamVector.zeros(net.shapes)
    elif opt.velocity.shapes != net.shapes:
        raise ValueError("optimizer velocity shapes do not match net shapes")
    v = opt.momentum * opt.velocity.values + grad.values + opt.weight_decay * theta.values
    opt.velocity = ParamVector(v, net.shapes)
    net.set_vector(ParamVector(theta.values - opt.learning_rate * v, net.shapes))
