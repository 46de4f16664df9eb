"""Small feed-forward network engine with hand-written backpropagation.

Everything runs in float64. A model is an ordered list of dense layers;
prediction applies softmax to the last layer's output.  ``backprop`` can
mix a loss head (softmax cross-entropy or sigmoid binary cross-entropy)
with gradients injected at any layer's post-activation output, which is how
the membership discriminator's loss reaches the classifier weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

EPS = 1e-12

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bad layer shapes: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class MlpModel:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.n_in != prev.n_out:
                raise ValueError(
                    f"layer dimensions do not chain: {prev.n_out} -> {cur.n_in}"
                )

    @property
    def n_inputs(self) -> int:
        return self.layers[0].n_in

    @property
    def n_classes(self) -> int:
        return self.layers[-1].n_out

    @property
    def widths(self) -> list[int]:
        return [layer.n_out for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        """Parameter buffers in canonical order: W0, b0, W1, b1, ..."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())

    def n_weights(self) -> int:
        return sum(layer.weights.size for layer in self.layers)


def init_mlp(sizes: Sequence[int], seed: int, hidden_activation: str = "relu",
             output_activation: str = "identity") -> MlpModel:
    """Glorot-uniform weights, zero biases.

    ``sizes`` lists every width including input and output, e.g.
    ``[64, 128, 64, 10]``.
    """
    if len(sizes) < 2:
        raise ValueError("sizes must include input and output widths")
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        act = output_activation if i == len(sizes) - 2 else hidden_activation
        layers.append(DenseLayer(w, np.zeros(n_out), act))
    return MlpModel(layers)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(a, kind):
    # derivative expressed through the post-activation value
    if kind == "relu":
        return (a > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(a)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LayerActivations:
    """Post-activation output of every layer plus the softmax probabilities."""

    activations: list[np.ndarray]
    probs: np.ndarray

    @property
    def logits(self) -> np.ndarray:
        return self.activations[-1]


def _as_batch(model: MlpModel, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ValueError(
            f"input shape {np.shape(x)} does not match model input dimension {model.n_inputs}"
        )
    return x, single


def forward_all(model: MlpModel, x) -> LayerActivations:
    """Run ``x`` (one vector or a row batch) through every layer."""
    a, single = _as_batch(model, x)
    acts = []
    for layer in model.layers:
        a = _activate(a @ layer.weights.T + layer.bias, layer.activation)
        acts.append(a)
    probs = softmax(acts[-1])
    if single:
        return LayerActivations([v[0] for v in acts], probs[0])
    return LayerActivations(acts, probs)


def predict_proba(model: MlpModel, x) -> np.ndarray:
    return forward_all(model, x).probs


def cross_entropy(probs, y) -> float:
    """``-log(probs[y])`` with the log argument floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    y = int(y)
    if not 0 <= y < probs.shape[-1]:
        raise IndexError(f"class index {y} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[y], EPS)))


def mean_cross_entropy(model: MlpModel, x, y) -> float:
    probs = forward_all(model, x).probs
    y = np.asarray(y, dtype=np.int64)
    return float(-np.log(np.maximum(probs[np.arange(len(y)), y], EPS)).mean())


@dataclass
class GradientSet:
    """Gradient buffers mirroring ``MlpModel.params()`` order."""

    grads: list[np.ndarray]
    input_grad: np.ndarray | None = None

    def __iter__(self):
        return iter(self.grads)

    def __len__(self):
        return len(self.grads)

    def max_abs(self) -> float:
        return max(float(np.abs(g).max()) if g.size else 0.0 for g in self.grads)


def backprop(model: MlpModel, x, y=None, loss: str | None = "ce",
             inject: Mapping[int, np.ndarray] | None = None,
             cache: LayerActivations | None = None) -> GradientSet:
    """Gradient of a batch-mean loss with respect to every parameter.

    ``loss="ce"`` is softmax cross-entropy against integer labels ``y``;
    ``loss="bce"`` treats the single output unit as a logit and ``y`` as
    0/1 targets.  ``inject`` maps a layer index to the gradient of the
    (already batch-averaged) loss with respect to that layer's
    post-activation output, shape ``(batch, width)``.  Passing
    ``loss=None`` backpropagates injected gradients only.

    The gradient with respect to the input batch is returned as
    ``input_grad``.
    """
    xb, _ = _as_batch(model, x)
    n = xb.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if loss is None and not inject:
        raise ValueError("nothing to differentiate: no loss head and no injected gradient")
    if cache is None:
        cache = forward_all(model, xb)
    acts = cache.activations
    L = len(model.layers)

    # gradient w.r.t. the last layer's post-activation output
    if loss == "ce":
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (n,):
            raise ValueError("need one label per row")
        if y.min() < 0 or y.max() >= model.n_classes:
            raise IndexError("label out of range")
        delta = cache.probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
    elif loss == "bce":
        if model.n_classes != 1:
            raise ValueError("bce head needs a single output unit")
        z = np.asarray(y, dtype=np.float64).reshape(n, 1)
        delta = (sigmoid(acts[-1]) - z) / n
    elif loss is None:
        delta = np.zeros_like(acts[-1])
    else:
        raise ValueError(f"unknown loss head {loss!r}")

    grads: list[np.ndarray] = [None] * (2 * L)
    inject = inject or {}
    for j in sorted(inject):
        if not 0 <= j < L:
            raise IndexError(f"injection layer {j} out of range")
    for j in range(L - 1, -1, -1):
        if j in inject:
            g = np.asarray(inject[j], dtype=np.float64)
            if g.shape != acts[j].shape:
                raise ValueError(f"injected gradient shape {g.shape} != {acts[j].shape}")
            delta = delta + g
        layer = model.layers[j]
        dz = delta * _activation_grad(acts[j], layer.activation)
        a_prev = acts[j - 1] if j > 0 else xb
        grads[2 * j] = dz.T @ a_prev
        grads[2 * j + 1] = dz.sum(axis=0)
        delta = dz @ layer.weights
    return GradientSet(grads, input_grad=delta)


@dataclass
class SGD:
    """Momentum SGD: ``v = mu*v + g``, ``theta -= lr*v``.

    ``frozen`` optionally holds one boolean buffer per parameter; frozen
    entries keep their exact value and zero velocity.
    """

    lr: float
    momentum: float = 0.9
    frozen: list[np.ndarray] | None = None
    velocity: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")

    def step(self, model: MlpModel, grads: GradientSet | Sequence[np.ndarray]):
        sgd_step(model, grads, self)


# the optimizer state type carries the same fields as SGD
OptimizerState = SGD


def sgd_step(model: MlpModel, grads, opt: SGD) -> None:
    params = model.params()
    grads = list(grads)
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient buffers, got {len(grads)}")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
    if opt.velocity is None:
        opt.velocity = [np.zeros_like(p) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        v = opt.velocity[i]
        v *= opt.momentum
        v += g
        if opt.frozen is not None and opt.frozen[i] is not None:
            mask = opt.frozen[i]
            v[mask] = 0.0
            keep = p[mask].copy()
            p -= opt.lr * v
            p[mask] = keep
        else:
            p -= opt.lr * v


def accuracy(model: MlpModel, x, y) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals ``y``."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty dataset")
    pred = np.argmax(forward_all(model, x).probs, axis=-1)
    return float(np.mean(pred == y))


def train_classifier(model: MlpModel, x, y, epochs: int, lr: float, batch_size: int = 64,
                     momentum: float = 0.9, seed: int = 0) -> MlpModel:
    """Plain minibatch cross-entropy training, in place.  Returns ``model``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(seed))
    opt = SGD(lr, momentum)
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            opt.step(model, backprop(model, x[idx], y[idx]))
    return model
