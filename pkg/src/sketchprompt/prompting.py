"""Mapping blocks for the bidirectional prompt exchange.

Three trainable blocks connect the two encoders:

* patches -> text prompt rows (three affine maps with rectifiers between),
* template context-word embeddings -> layer-shared visual rows (one affine),
* per-layer class-pooled text outputs -> layer-specific visual rows
  (a two-affine bottleneck with a rectifier, shared across layers).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


def _fan_in(rng, rows, cols):
    return rng.normal(0.0, rows ** -0.5, size=(rows, cols))


class VisualToTextualMapper:
    """Mean-pooled patch embeddings -> m learnable text prompt rows."""

    def __init__(self, d_v, d_t, m, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 301]))
        self.m = m
        self.d_t = d_t
        self.w1 = Parameter(_fan_in(rng, d_v, d_v), True, "map_t.w1")
        self.b1 = Parameter(np.zeros(d_v), True, "map_t.b1")
        self.w2 = Parameter(_fan_in(rng, d_v, d_v), True, "map_t.w2")
        self.b2 = Parameter(np.zeros(d_v), True, "map_t.b2")
        self.w3 = Parameter(_fan_in(rng, d_v, m * d_t), True, "map_t.w3")
        self.b3 = Parameter(np.zeros(m * d_t), True, "map_t.b3")

    def __call__(self, e0: Tensor) -> Tensor:
        """(..., N, d_v) -> (..., m, d_t); permutation invariant over patches."""
        pooled = ad.tmean(e0, axis=-2)
        h = ad.relu(ad.add(ad.matmul(pooled, self.w1.value), self.b1.value))
        h = ad.relu(ad.add(ad.matmul(h, self.w2.value), self.b2.value))
        flat = ad.add(ad.matmul(h, self.w3.value), self.b3.value)
        return ad.reshape(flat, e0.shape[:-2] + (self.m, self.d_t))

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


class TextualToVisualMapper:
    """Rowwise affine d_t -> d_v over the template context-word embeddings."""

    def __init__(self, d_t, d_v, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 302]))
        self.w = Parameter(_fan_in(rng, d_t, d_v), True, "map_v.w")
        self.b = Parameter(np.zeros(d_v), True, "map_v.b")

    def __call__(self, context_words: Tensor) -> Tensor:
        """(J-1, d_t) context-word rows -> (J-1, d_v); one set for all layers."""
        return ad.add(ad.matmul(context_words, self.w.value), self.b.value)

    def parameters(self):
        return [self.w, self.b]


class VisionTextConjunction:
    """Class-pooled text-layer output -> n layer-specific visual rows.

    One instance is shared across all encoder layers.
    """

    def __init__(self, d_t, d_v, n, bottleneck=None, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
        if bottleneck is None:
            bottleneck = max(1, d_t // 4)
        self.n = n
        self.d_v = d_v
        self.w1 = Parameter(_fan_in(rng, d_t, bottleneck), True, "map_vt.w1")
        self.b1 = Parameter(np.zeros(bottleneck), True, "map_vt.b1")
        self.w2 = Parameter(_fan_in(rng, bottleneck, n * d_v), True, "map_vt.w2")
        self.b2 = Parameter(np.zeros(n * d_v), True, "map_vt.b2")

    def __call__(self, layer_output_eos: Tensor) -> Tensor:
        """(..., C, d_t) per-class eos rows -> (..., n, d_v).

        The class axis is mean-pooled first, so the result is invariant to
        class ordering and its size is independent of the class count.
        """
        if layer_output_eos.shape[-2] == 0:
            raise ValueError("empty class set")
        pooled = ad.tmean(layer_output_eos, axis=-2)
        h = ad.relu(ad.add(ad.matmul(pooled, self.w1.value), self.b1.value))
        flat = ad.add(ad.matmul(h, self.w2.value), self.b2.value)
        return ad.reshape(flat, layer_output_eos.shape[:-2] + (self.n, self.d_v))

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class PromptBundle:
    """Per-layer injected tokens for one batch of images."""

    text_tokens: Tensor | None          # (..., m, d_t), same block at every layer
    semantic_visual: Tensor | None      # (..., J-1, d_v), same at every layer
    layer_visual: list | None           # L entries of (..., n, d_v)

    def visual_per_layer(self, layers):
        """Concatenated [semantic | layer-specific] rows per layer, or None."""
        if self.semantic_visual is None and self.layer_visual is None:
            return None
        out = []
        for i in range(layers):
            parts = []
            if self.semantic_visual is not None:
                parts.append(self.semantic_visual)
            if self.layer_visual is not None:
                parts.append(self.layer_visual[i])
            out.append(parts[0] if len(parts) == 1 else ad.concat(parts, axis=-2))
        return out
