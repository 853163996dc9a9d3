"""Tile-permutation machinery and the permutation-index solver.

A permutation table indexes tile rearrangements of a g x g grid; the shuffle
operation moves whole image tiles, so it is a pixel-level bijection.  The
solver is a small trainable transformer over a 2-token sequence of global
embeddings (conditioning image first, permuted sketch second) ending in a
classifier over the table.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from math import factorial

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .encoders import _TransformerStack, _gauss


@dataclass
class PermutationTable:
    grid: int
    perms: np.ndarray  # (P, grid*grid) int array; row 0 is the identity

    @property
    def size(self):
        return len(self.perms)

    def export_text(self, path):
        """One permutation per line, space-separated tile indices."""
        with open(path, "w") as f:
            for row in self.perms:
                f.write(" ".join(str(int(v)) for v in row) + "\n")

    @staticmethod
    def import_text(path, grid):
        rows = []
        with open(path) as f:
            for line in f:
                rows.append([int(v) for v in line.split()])
        return PermutationTable(grid, np.array(rows, dtype=np.int64))


def build_table(g, count=None, seed=0):
    """Deterministic permutation table for a g x g grid.

    g=2 enumerates all 24 tile orders.  For larger grids a greedy
    max-Hamming construction picks ``count`` entries whose pairwise Hamming
    distance stays at least floor(g^2 / 2).
    """
    if g < 2:
        raise ValueError("grid must be at least 2")
    tiles = g * g
    total = factorial(tiles)
    if count is None:
        count = 24 if g == 2 else 64
    if count > total:
        raise ValueError(f"requested {count} permutations but only {total} exist")
    identity = np.arange(tiles)
    if g == 2:
        perms = np.array(sorted(permutations(range(4))), dtype=np.int64)
        # put the identity first, keep the rest in lexicographic order
        rest = [p for p in perms if not np.array_equal(p, identity)]
        table = np.vstack([identity, np.array(rest)])[:count]
        return PermutationTable(g, table.astype(np.int64))
    rng = np.random.default_rng(np.random.SeedSequence([seed, g, count]))
    chosen = [identity]
    min_dist = tiles // 2
    tries = 0
    while len(chosen) < count:
        cand = rng.permutation(tiles)
        dists = [(np.asarray(c) != cand).sum() for c in chosen]
        if min(dists) >= min_dist:
            chosen.append(cand)
        tries += 1
        if tries > 200000:
            raise ValueError("could not satisfy the Hamming-distance floor")
    return PermutationTable(g, np.array(chosen, dtype=np.int64))


def shuffle(image, perm_index, table: PermutationTable):
    """Rearrange tiles: output tile j = input tile perm[j] (row-major).

    Works on a single (H, W) image or a batch (..., H, W).
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, np.float64)
    g = table.grid
    h, w = arr.shape[-2], arr.shape[-1]
    if h % g or w % g:
        raise ValueError(f"image dims {h}x{w} not divisible by grid {g}")
    th, tw = h // g, w // g
    lead = arr.shape[:-2]
    tiles = arr.reshape(lead + (g, th, g, tw))
    tiles = np.moveaxis(tiles, -2, -3).reshape(lead + (g * g, th, tw))
    if np.isscalar(perm_index) or np.ndim(perm_index) == 0:
        out_tiles = tiles[..., table.perms[int(perm_index)], :, :]
    else:
        idx = np.asarray(perm_index)
        if lead != idx.shape:
            raise ValueError("per-sample permutation indices must match the batch shape")
        out_tiles = tiles[np.arange(idx.shape[0])[:, None], table.perms[idx]]
    out = out_tiles.reshape(lead + (g, g, th, tw))
    out = np.moveaxis(out, -2, -3).reshape(lead + (h, w))
    return out


def fuse(context_feat: Tensor, permuted_feat: Tensor) -> Tensor:
    """Stack two (..., d_e) embeddings into a (..., 2, d_e) token pair.

    Row 0 is the conditioning image, row 1 the permuted sketch.
    """
    a = ad.reshape(context_feat, context_feat.shape[:-1] + (1, context_feat.shape[-1]))
    b = ad.reshape(permuted_feat, permuted_feat.shape[:-1] + (1, permuted_feat.shape[-1]))
    return ad.concat([a, b], axis=-2)


class JigsawSolver:
    """Two trainable transformer layers over the fused pair, then a classifier."""

    def __init__(self, d_e, table: PermutationTable, heads=2, layers=2, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 404]))
        self.table = table
        self.stack = _TransformerStack(
            rng, "solver", layers, d_e, heads, mlp_ratio=2, causal=False,
            trainable_core=True,
        )
        # small head init keeps the untrained solver close to a uniform guesser
        self.cls_w = Parameter(_gauss(rng, (d_e, table.size)), True, "solver.cls_w")
        self.cls_b = Parameter(np.zeros(table.size), True, "solver.cls_b")

    def __call__(self, pair: Tensor) -> Tensor:
        """(..., 2, d_e) fused pair -> (..., P) logits."""
        x = pair
        for i in range(self.stack.layers):
            x = self.stack.run_layer(x, i)
        pooled = ad.tmean(x, axis=-2)
        return ad.add(ad.matmul(pooled, self.cls_w.value), self.cls_b.value)

    def parameters(self):
        return self.stack.parameters() + [self.cls_w, self.cls_b]
