"""Gallery embedding, nearest-neighbor ranking, and the metric suite.

Inference builds every prompt bundle from seen class names only; passing an
unseen name into the embedding path is a contract violation and raises.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import linalg as sla

from .model import SketchPhotoModel, template_for


class InferenceContractError(RuntimeError):
    """Raised when an unseen class name reaches the inference prompt path."""


@dataclass
class EmbeddingGallery:
    embeddings: np.ndarray     # (K, d_e), unit rows
    class_ids: np.ndarray      # (K,)
    instance_ids: np.ndarray   # (K,)
    protocol: str


@dataclass
class RankedList:
    query_id: int
    order: np.ndarray          # gallery indices, best first
    relevance: np.ndarray      # 0/1 bits in ranked order


def embed_images(model: SketchPhotoModel, images, modality, protocol,
                 seen_class_names, forbidden_names=(), batch_size=64):
    """Embed images through the fully prompted vision encoder.

    ``seen_class_names`` drives the bundle; any overlap with
    ``forbidden_names`` (the unseen set, at inference) raises
    InferenceContractError before any tokenization happens.
    """
    bad = set(seen_class_names) & set(forbidden_names)
    if bad:
        raise InferenceContractError(
            f"unseen class names passed to the inference prompt path: {sorted(bad)}"
        )
    template = template_for(modality, protocol)
    arr = np.asarray(images, dtype=np.float64)
    out = []
    for start in range(0, len(arr), batch_size):
        chunk = arr[start:start + batch_size]
        out.append(model.encode_images(chunk, template, list(seen_class_names))["f_v"].data)
    return np.concatenate(out, axis=0)


def embed_gallery(model, dataset, item_keys, modality, protocol,
                  seen_class_names, forbidden_names=()):
    """Build an EmbeddingGallery for (class_id, instance) keys."""
    images = np.stack([
        getattr(dataset.pairs[k], "photo" if modality == "photo" else "sketch")
        for k in item_keys
    ])
    emb = embed_images(model, images, modality, protocol,
                       seen_class_names, forbidden_names)
    return EmbeddingGallery(
        embeddings=emb,
        class_ids=np.array([k[0] for k in item_keys]),
        instance_ids=np.array([k[1] for k in item_keys]),
        protocol=protocol,
    )


def rank(query_emb, gallery: EmbeddingGallery, relevance_bits, query_id=0):
    """Order gallery items by descending cosine; ties break by ascending index."""
    if len(gallery.embeddings) == 0:
        raise ValueError("empty gallery")
    scores = gallery.embeddings @ np.asarray(query_emb)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return RankedList(query_id, order, np.asarray(relevance_bits)[order])


def average_precision(rel, k=None):
    """AP truncated at k: mean over relevant ranks r of (hits in top r)/r."""
    rel = np.asarray(rel, dtype=np.float64)
    total_rel = rel.sum()
    if total_rel == 0:
        warnings.warn("no relevant items; AP defined as 0")
        return 0.0
    if k is not None:
        rel = rel[:k]
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float((rel * hits / ranks).sum() / total_rel)


def precision_at_k(rel, k):
    if k <= 0:
        raise ValueError("k must be positive")
    rel = np.asarray(rel, dtype=np.float64)
    if len(rel) < k:
        rel = np.concatenate([rel, np.zeros(k - len(rel))])
    return float(rel[:k].sum() / k)


def acc_at_k(ranked_lists, k):
    """Fraction of queries whose single true match sits in the top k."""
    hits = 0
    for rl in ranked_lists:
        if rl.relevance.sum() != 1:
            raise ValueError("Acc@K requires exactly one true match per query")
        hits += int(rl.relevance[:k].sum() > 0)
    return hits / len(ranked_lists)


def frechet_distance(feats_a, feats_b, eps=1e-6):
    """2-Wasserstein distance between Gaussian fits of two embedding sets.

    Returns (value, regularized) where ``regularized`` marks that eps*I was
    added to stabilize a degenerate covariance.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    d = cov_a.shape[0]
    regularized = False
    if len(a) < d + 1 or len(b) < d + 1:
        regularized = True
    covmean, _ = sla.sqrtm(cov_a @ cov_b, disp=False)
    if not np.isfinite(covmean).all():
        regularized = True
    if regularized:
        cov_a = cov_a + eps * np.eye(d)
        cov_b = cov_b + eps * np.eye(d)
        covmean, _ = sla.sqrtm(cov_a @ cov_b, disp=False)
    covmean = np.real(covmean)
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a + cov_b - 2.0 * covmean))
    return max(value, 0.0), regularized


def expected_random_ap(n, r):
    """Analytic mean AP of a uniformly random ranking with r of n relevant."""
    if r == 0:
        return 0.0
    k = np.arange(1, n + 1)
    # P(rank k relevant) = r/n; E[hits above | relevant at k] = (k-1)(r-1)/(n-1)
    expected_hits = 1.0 + (k - 1) * (r - 1) / max(1, n - 1)
    return float(((r / n) * expected_hits / k).sum() / r)


def random_map_stats(gallery_classes, query_classes, relevance="class",
                     query_instances=None, gallery_instances=None,
                     n_sims=2000, seed=0):
    """Analytic mean and simulated spread of mAP under random ranking."""
    gallery_classes = np.asarray(gallery_classes)
    n = len(gallery_classes)
    r_per_query = []
    for i, qc in enumerate(query_classes):
        if relevance == "instance":
            r = int(((gallery_classes == qc)
                     & (np.asarray(gallery_instances) == query_instances[i])).sum())
        else:
            r = int((gallery_classes == qc).sum())
        r_per_query.append(r)
    mean = float(np.mean([expected_random_ap(n, r) for r in r_per_query]))
    rng = np.random.default_rng(seed)
    sims = np.empty(n_sims)
    for s in range(n_sims):
        aps = []
        for r in r_per_query:
            rel = np.zeros(n)
            rel[rng.choice(n, size=r, replace=False)] = 1.0
            aps.append(average_precision(rel))
        sims[s] = np.mean(aps)
    return mean, float(sims.std())


@dataclass
class MetricsReport:
    protocol: str
    map_all: float | None = None
    map_at_200: float | None = None
    map_at_200_degenerate: bool = False
    p_at_100: float | None = None
    p_at_200: float | None = None
    acc_at_1: float | None = None
    acc_at_5: float | None = None
    frechet: float | None = None
    frechet_regularized: bool = False
    config_hash: str = ""
    seed: int = 0

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)


def evaluate(model: SketchPhotoModel, dataset, split, protocol=None, seed=0,
             config_hash=""):
    """Full embed -> rank -> metrics pass over the unseen-class queries."""
    protocol = split.protocol if protocol is None else protocol
    if protocol != split.protocol:
        raise ValueError(
            f"protocol {protocol!r} does not match split protocol {split.protocol!r}"
        )
    seen_names = [dataset.class_name(c) for c in split.seen_ids]
    unseen_names = [dataset.class_name(c) for c in split.unseen_ids]
    n_inst = dataset.instances_per_class

    unseen_keys = [(c, i) for c in split.unseen_ids for i in range(n_inst)]
    if protocol == "gzs":
        gallery_keys = [(c, i) for c in split.seen_ids for i in range(n_inst)] + unseen_keys
    else:
        gallery_keys = unseen_keys

    gallery = embed_gallery(model, dataset, gallery_keys, "photo", protocol,
                            seen_names, forbidden_names=unseen_names)
    query_emb = embed_images(
        model,
        np.stack([dataset.pairs[k].sketch for k in unseen_keys]),
        "sketch", protocol, seen_names, forbidden_names=unseen_names,
    )

    ranked = []
    for qi, key in enumerate(unseen_keys):
        if protocol == "fg":
            rel = (gallery.class_ids == key[0]) & (gallery.instance_ids == key[1])
        else:
            rel = gallery.class_ids == key[0]
        ranked.append(rank(query_emb[qi], gallery, rel.astype(float), query_id=qi))

    report = MetricsReport(protocol=protocol, config_hash=config_hash, seed=seed)
    gallery_size = len(gallery_keys)
    report.map_at_200 = float(np.mean([average_precision(r.relevance, 200) for r in ranked]))
    report.map_at_200_degenerate = gallery_size <= 200
    report.p_at_100 = float(np.mean([precision_at_k(r.relevance, 100) for r in ranked]))
    report.p_at_200 = float(np.mean([precision_at_k(r.relevance, 200) for r in ranked]))
    if protocol == "fg":
        report.acc_at_1 = acc_at_k(ranked, 1)
        report.acc_at_5 = acc_at_k(ranked, 5)
    else:
        report.map_all = float(np.mean([average_precision(r.relevance) for r in ranked]))
    photo_emb = gallery.embeddings[-len(unseen_keys):] if protocol == "gzs" \
        else gallery.embeddings
    fd, flagged = frechet_distance(query_emb, photo_emb)
    report.frechet = fd
    report.frechet_regularized = flagged
    return report


def dump_embeddings(path, gallery: EmbeddingGallery, query_emb=None, query_keys=None):
    """CSV dump: id,domain,class,e0..e{d-1}."""
    d = gallery.embeddings.shape[1]
    with open(path, "w") as f:
        f.write("id,domain,class," + ",".join(f"e{i}" for i in range(d)) + "\n")
        for i, row in enumerate(gallery.embeddings):
            f.write(f"{i},photo,{gallery.class_ids[i]},"
                    + ",".join(f"{v:.17g}" for v in row) + "\n")
        if query_emb is not None:
            for i, row in enumerate(query_emb):
                cid = query_keys[i][0] if query_keys else -1
                f.write(f"{i},sketch,{cid},"
                        + ",".join(f"{v:.17g}" for v in row) + "\n")
