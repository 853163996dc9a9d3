"""Training objectives: adaptive-margin triplet, text-image classification,
and the conditional jigsaw loss, plus their weighted total.

All batch sums are implemented as means so the loss weights keep their
meaning across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .jigsaw import fuse


@dataclass
class LossConfig:
    alpha: float = 1.0          # weight of the classification loss
    beta: float = 0.5           # weight of the jigsaw loss
    gamma: float = 1.0          # weight of the triplet loss
    tau: float = 0.07
    margin_mode: str = "adaptive"   # adaptive | fixed
    fixed_margin: float = 0.2

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.alpha == 0 and self.beta == 0 and self.gamma == 0:
            raise ValueError("at least one loss weight must be positive")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.margin_mode not in ("adaptive", "fixed"):
            raise ValueError(f"unknown margin mode: {self.margin_mode!r}")


def adaptive_margin(class_feats: Tensor, idx_pos, idx_neg) -> Tensor:
    """Cosine of the two class-name text embeddings, per triplet.

    ``class_feats``: (C, d_e) image-independent class-name features;
    returns (B,) margins in [-1, 1].  Symmetric in its two class arguments.
    The result is detached: the margin is a per-triplet constant, otherwise
    the objective can shrink itself by spreading the class-name features
    instead of separating the image embeddings.
    """
    a = class_feats.detach()[np.asarray(idx_pos)]
    b = class_feats.detach()[np.asarray(idx_neg)]
    return ad.cosine_similarity(a, b, axis=-1).detach()


def triplet_loss(f_anchor, f_pos, f_neg, margin) -> Tensor:
    """Mean over the batch of [d+^2 - d-^2 + margin]_+ on unit features."""
    d_pos = ad.tsum(ad.square(ad.sub(f_anchor, f_pos)), axis=-1)
    d_neg = ad.tsum(ad.square(ad.sub(f_anchor, f_neg)), axis=-1)
    margin = margin if isinstance(margin, Tensor) else Tensor(margin)
    hinge = ad.relu(ad.add(ad.sub(d_pos, d_neg), margin))
    return ad.tmean(hinge)


def class_cosines(f_v: Tensor, f_t: Tensor) -> Tensor:
    """Rowwise cosines between image features (B, d) and per-class text
    features (B, C, d); returns (B, C)."""
    b, c, d = f_t.shape
    f_vb = ad.broadcast_to(ad.reshape(f_v, (b, 1, d)), (b, c, d))
    return ad.cosine_similarity(f_vb, f_t, axis=-1)


def class_prob(f_v: Tensor, f_t: Tensor, tau) -> Tensor:
    """Softmax over classes of cosine/tau; rows sum to 1."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    return ad.softmax(ad.mul(class_cosines(f_v, f_t), 1.0 / tau), axis=-1)


def classification_loss(f_v: Tensor, f_t: Tensor, labels_one_hot, tau) -> Tensor:
    """Mean cross-entropy of cosine/tau logits against one-hot class labels."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    logits = ad.mul(class_cosines(f_v, f_t), 1.0 / tau)
    return ad.tmean(ad.cross_entropy(logits, labels_one_hot, axis=-1))


def cjs_loss(solver, f_anchor, f_perm, f_jig_pos, f_jig_neg, perm_one_hot) -> Tensor:
    """Cross-entropy on the anchor pairing plus the conditioning hinge.

    The hinge pushes the matching conditioning image to explain the
    permutation better (lower CE) than the mismatched one.
    """
    ce_anchor = ad.cross_entropy(solver(fuse(f_anchor, f_perm)), perm_one_hot, axis=-1)
    ce_pos = ad.cross_entropy(solver(fuse(f_jig_pos, f_perm)), perm_one_hot, axis=-1)
    ce_neg = ad.cross_entropy(solver(fuse(f_jig_neg, f_perm)), perm_one_hot, axis=-1)
    return ad.tmean(ad.add(ce_anchor, ad.relu(ad.sub(ce_pos, ce_neg))))


def one_hot(indices, depth):
    out = np.zeros((len(indices), depth))
    out[np.arange(len(indices)), np.asarray(indices)] = 1.0
    return out


def total_loss(parts, cfg: LossConfig) -> Tensor:
    """Weighted sum; with alpha = beta = 0 and gamma = 1 this is the
    triplet term bitwise."""
    terms = []
    if cfg.gamma > 0:
        t = parts["triplet"]
        terms.append(t if cfg.gamma == 1.0 else ad.mul(t, cfg.gamma))
    if cfg.alpha > 0 and "class" in parts:
        terms.append(ad.mul(parts["class"], cfg.alpha))
    if cfg.beta > 0 and "cjs" in parts:
        terms.append(ad.mul(parts["cjs"], cfg.beta))
    if not terms:
        raise ValueError("no active loss terms")
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total
