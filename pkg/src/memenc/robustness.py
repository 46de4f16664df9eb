"""Transformations an encoded model may face after release, and the
encoding-aware pruning loop that counters magnitude pruning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import (
    Discriminator,
    EncodingConfig,
    MappingSpec,
    SplitDataset,
    mapping_for_key,
    membership_encoding,
)
from .nn import SGD, DenseLayer, MlpModel, backprop, init_mlp
from .syndata import EncodingKey

# ---------------------------------------------------------------- input masking


@dataclass(frozen=True)
class MaskSpec:
    """``center`` zeroes the centred w x w square; ``boundary`` keeps only the
    centred (H-w) x (W-w) square; ``rect`` zeroes rows ``r0:r1`` and columns
    ``c0:c1``."""

    mode: str
    w: int = 0
    height: int = 32
    width: int = 32
    channels: int = 1
    rect: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if self.mode not in ("center", "boundary", "rect"):
            raise ValueError(f"unknown mask mode {self.mode!r}")
        if self.mode == "rect":
            if self.rect is None:
                raise ValueError("rect mode needs (r0, r1, c0, c1)")
            r0, r1, c0, c1 = self.rect
            if not (0 <= r0 <= r1 <= self.height and 0 <= c0 <= c1 <= self.width):
                raise ValueError(f"rectangle {self.rect} outside {self.height}x{self.width}")
        elif not 0 <= self.w <= min(self.height, self.width):
            raise ValueError(f"mask width {self.w} outside [0, {min(self.height, self.width)}]")

    @property
    def shape(self):
        return (self.height, self.width, self.channels)


def _zero_region(spec: MaskSpec) -> np.ndarray:
    """Boolean (H, W) map of pixels set to zero."""
    H, W = spec.height, spec.width
    zero = np.zeros((H, W), dtype=bool)
    if spec.mode == "rect":
        r0, r1, c0, c1 = spec.rect
        zero[r0:r1, c0:c1] = True
        return zero
    if spec.mode == "center":
        top, left = (H - spec.w) // 2, (W - spec.w) // 2
        zero[top:top + spec.w, left:left + spec.w] = True
    else:
        kh, kw = H - spec.w, W - spec.w
        top, left = (H - kh) // 2, (W - kw) // 2
        zero[:] = True
        zero[top:top + kh, left:left + kw] = False
    return zero


def mask_input(x, spec: MaskSpec) -> np.ndarray:
    """Mask one image (H, W, C), a stack (N, H, W, C), or flattened rows
    (N, H*W*C) laid out in (H, W, C) order.  Masked pixels become 0."""
    x = np.array(x, dtype=np.float64, copy=True)
    zero = _zero_region(spec)
    flat = x.ndim in (1, 2) and x.shape[-1] == spec.height * spec.width * spec.channels
    if flat:
        lead = x.shape[:-1]
        img = x.reshape(lead + spec.shape)
        img[..., zero, :] = 0.0
        return img.reshape(x.shape)
    if x.shape[-3:] != spec.shape:
        raise ValueError(f"image shape {x.shape} does not match mask geometry {spec.shape}")
    x[..., zero, :] = 0.0
    return x


def region_grid(height: int, width: int, channels: int = 1, stride: int = 8):
    """Rect masks tiling the image in ``stride`` x ``stride`` blocks,
    row-major."""
    return [MaskSpec("rect", height=height, width=width, channels=channels,
                     rect=(r, min(r + stride, height), c, min(c + stride, width)))
            for r in range(0, height, stride) for c in range(0, width, stride)]


# ---------------------------------------------------------------- pruning


@dataclass(frozen=True)
class PruneSpec:
    p: float
    scope: str = "global"  # or "per-layer"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("prune fraction must be in [0, 1]")
        if self.scope not in ("global", "per-layer"):
            raise ValueError(f"unknown prune scope {self.scope!r}")


def _smallest(values: np.ndarray, count: int) -> np.ndarray:
    # stable sort on |w| breaks ties by ascending flat index
    return np.argsort(np.abs(values), kind="stable")[:count]


def magnitude_prune(model: MlpModel, spec: PruneSpec):
    """Zero the smallest-magnitude weights; biases are left alone.

    Returns ``(pruned_model, masks)`` where ``masks[i]`` is a boolean array
    shaped like layer ``i``'s weights marking the zeroed entries.
    """
    out = model.copy()
    masks = [np.zeros(l.weights.shape, dtype=bool) for l in out.layers]
    if spec.scope == "global":
        flat = np.concatenate([l.weights.ravel() for l in out.layers])
        chosen = _smallest(flat, int(math.floor(spec.p * flat.size)))
        hit = np.zeros(flat.size, dtype=bool)
        hit[chosen] = True
        offset = 0
        for m, l in zip(masks, out.layers):
            m[...] = hit[offset:offset + l.weights.size].reshape(l.weights.shape)
            offset += l.weights.size
    else:
        for m, l in zip(masks, out.layers):
            idx = _smallest(l.weights.ravel(), int(math.floor(spec.p * l.weights.size)))
            m.ravel()[idx] = True
    for m, l in zip(masks, out.layers):
        l.weights[m] = 0.0
    return out, masks


def frozen_from_masks(masks) -> list:
    """Per-parameter freeze buffers (weights masked, biases free)."""
    frozen = []
    for m in masks:
        frozen.extend((np.asarray(m, dtype=bool), None))
    return frozen


def adversarial_prune(model: MlpModel, spec: PruneSpec, split: SplitDataset, key: EncodingKey,
                      finetune: EncodingConfig, mapping: MappingSpec | None = None):
    """Prune, then rerun membership encoding with the pruned weights frozen
    at zero and a freshly initialised linear discriminator.

    Returns ``(model, report, masks)``.
    """
    pruned, masks = magnitude_prune(model, spec)
    if mapping is None:
        mapping = mapping_for_key(pruned, key)
    disc = Discriminator.linear(mapping.dim, finetune.disc_seed)
    tuned, _, report = membership_encoding(split, key, pruned, finetune, mapping=mapping,
                                           discriminator=disc, frozen=frozen_from_masks(masks))
    return tuned, report, masks


# ---------------------------------------------------------------- transfer


def transfer_finetune(model: MlpModel, x, y, n_classes: int, epochs: int, lr: float = 0.001,
                      seed: int = 0, batch_size: int = 64, momentum: float = 0.9,
                      on_epoch=None) -> MlpModel:
    """Swap the output layer for a fresh ``n_classes``-way layer and
    fine-tune every parameter on the new task.

    ``on_epoch(epoch, model)`` runs after each epoch.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ValueError(f"new data has shape {x.shape}; model expects {model.n_inputs} inputs")
    out = model.copy()
    last = out.layers[-1]
    head = init_mlp([last.n_in, n_classes], seed, output_activation=last.activation).layers[0]
    out.layers[-1] = DenseLayer(head.weights, head.bias, last.activation)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(seed))
    opt = SGD(lr, momentum)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            opt.step(out, backprop(out, x[idx], y[idx]))
        if on_epoch is not None:
            on_epoch(epoch, out)
    return out
