"""Metric implementations against brute-force oracles, ranking semantics,
and the inference-time class-name contract."""

import json

import numpy as np
import pytest

from sketchprompt.retrieval import (EmbeddingGallery, InferenceContractError,
                                    MetricsReport, acc_at_k, average_precision,
                                    dump_embeddings, embed_gallery,
                                    embed_images, evaluate, expected_random_ap,
                                    frechet_distance, precision_at_k,
                                    random_map_stats, rank)

from conftest import micro_model


# -- brute-force oracles -----------------------------------------------------


def test_ap_matches_bruteforce_on_1000_lists():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(5, 60))
        rel = (rng.uniform(size=n) < rng.uniform(0.05, 0.6)).astype(float)
        if rel.sum() == 0:
            rel[int(rng.integers(n))] = 1.0
        ours = average_precision(rel)
        hits, acc = 0, 0.0
        for i, r in enumerate(rel):
            if r:
                hits += 1
                acc += hits / (i + 1)
        worst = max(worst, abs(ours - acc / rel.sum()))
    assert worst < 1e-12


def test_truncated_ap_matches_bruteforce():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(30, 80))
        rel = (rng.uniform(size=n) < 0.3).astype(float)
        if rel.sum() == 0:
            rel[0] = 1.0
        k = int(rng.integers(5, n))
        ours = average_precision(rel, k)
        hits, acc = 0, 0.0
        for i, r in enumerate(rel[:k]):
            if r:
                hits += 1
                acc += hits / (i + 1)
        worst = max(worst, abs(ours - acc / rel.sum()))
    assert worst < 1e-12


def test_precision_at_k_matches_bruteforce():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(5, 40))
        rel = (rng.uniform(size=n) < 0.4).astype(float)
        k = int(rng.integers(1, n + 10))
        expect = sum(rel[:k]) / k
        assert abs(precision_at_k(rel, k) - expect) < 1e-12


def test_ap_no_relevant_warns_and_returns_zero():
    with pytest.warns(UserWarning, match="no relevant"):
        assert average_precision(np.zeros(10)) == 0.0


def test_precision_k_validation():
    with pytest.raises(ValueError):
        precision_at_k(np.ones(3), 0)


def test_acc_at_k_semantics():
    from sketchprompt.retrieval import RankedList
    lists = [
        RankedList(0, np.arange(5), np.array([1.0, 0, 0, 0, 0])),
        RankedList(1, np.arange(5), np.array([0, 0, 1.0, 0, 0])),
    ]
    assert acc_at_k(lists, 1) == 0.5
    assert acc_at_k(lists, 3) == 1.0
    bad = [RankedList(0, np.arange(3), np.array([1.0, 1.0, 0]))]
    with pytest.raises(ValueError, match="exactly one"):
        acc_at_k(bad, 1)


# -- Frechet -----------------------------------------------------------------


def frechet_eig_oracle(a, b):
    """Independent implementation via eigendecomposition square roots."""
    mu_a, mu_b = a.mean(0), b.mean(0)
    ca, cb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    ca, cb = np.atleast_2d(ca), np.atleast_2d(cb)
    w, v = np.linalg.eigh(ca)
    sa = v @ np.diag(np.sqrt(np.clip(w, 0, None))) @ v.T
    inner = sa @ cb @ sa
    w2, v2 = np.linalg.eigh(inner)
    tr_cross = np.sqrt(np.clip(w2, 0, None)).sum()
    d = mu_a - mu_b
    return float(d @ d + np.trace(ca) + np.trace(cb) - 2.0 * tr_cross)


@pytest.mark.parametrize("seed", range(5))
def test_frechet_matches_eig_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(400, 2)) @ rng.normal(size=(2, 2)) + rng.normal(size=2)
    b = rng.normal(size=(400, 2)) @ rng.normal(size=(2, 2)) + rng.normal(size=2)
    ours, flagged = frechet_distance(a, b)
    assert not flagged
    assert abs(ours - frechet_eig_oracle(a, b)) < 1e-8


def test_frechet_identical_sets_zero():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(300, 3))
    val, _ = frechet_distance(a, a.copy())
    assert abs(val) < 1e-9


def test_frechet_degenerate_flagged():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(4, 8))  # fewer samples than dimensions
    b = rng.normal(size=(4, 8))
    val, flagged = frechet_distance(a, b)
    assert flagged and np.isfinite(val)


# -- analytic random baseline ------------------------------------------------


def test_expected_random_ap_against_simulation():
    rng = np.random.default_rng(9)
    n, r = 40, 8
    sims = []
    for _ in range(20000):
        rel = np.zeros(n)
        rel[rng.choice(n, size=r, replace=False)] = 1.0
        hits = np.cumsum(rel)
        ranks = np.arange(1, n + 1)
        sims.append((rel * hits / ranks).sum() / r)
    assert abs(expected_random_ap(n, r) - np.mean(sims)) < 0.003


def test_expected_random_ap_edges():
    assert expected_random_ap(10, 0) == 0.0
    assert expected_random_ap(10, 10) == pytest.approx(1.0)


def test_random_map_stats_positive_sigma():
    mean, sigma = random_map_stats([0] * 5 + [1] * 5, [0, 1], n_sims=200)
    assert 0 < mean < 1 and sigma > 0


# -- ranking -----------------------------------------------------------------


def _gallery(emb, classes):
    return EmbeddingGallery(np.asarray(emb, float), np.asarray(classes),
                            np.arange(len(classes)), "zs")


def test_rank_descending_cosine():
    gal = _gallery([[1, 0], [0.6, 0.8], [0, 1]], [0, 1, 2])
    rl = rank(np.array([1.0, 0.0]), gal, [1, 0, 0])
    assert rl.order.tolist() == [0, 1, 2]
    assert rl.relevance.tolist() == [1, 0, 0]


def test_rank_tie_break_is_ascending_index():
    gal = _gallery([[1, 0], [1, 0], [1, 0]], [0, 1, 2])
    rl = rank(np.array([1.0, 0.0]), gal, [0, 0, 1])
    assert rl.order.tolist() == [0, 1, 2]


def test_rank_empty_gallery_rejected():
    gal = _gallery(np.zeros((0, 2)), [])
    with pytest.raises(ValueError, match="empty"):
        rank(np.array([1.0, 0.0]), gal, [])


# -- inference contract ------------------------------------------------------


def test_unseen_name_raises_contract_error(tiny_dataset):
    names = [c.name for c in tiny_dataset.classes]
    model = micro_model(class_names=names)
    imgs = np.zeros((1, 8, 8))
    with pytest.raises(InferenceContractError, match="unseen"):
        embed_images(model, imgs, "photo", "zs",
                     seen_class_names=names[:3] + [names[3]],
                     forbidden_names=[names[3]])


def test_zero_tokenizer_calls_on_unseen(tiny_dataset, tiny_split):
    names = [c.name for c in tiny_dataset.classes]
    model = micro_model(class_names=names)
    model.tokenizer.call_log.clear()
    evaluate(model, tiny_dataset, tiny_split)
    unseen = {tiny_dataset.class_name(c) for c in tiny_split.unseen_ids}
    assert model.tokenizer.call_log, "evaluation should tokenize seen prompts"
    assert not set(model.tokenizer.call_log) & unseen


# -- reports -----------------------------------------------------------------


def test_report_json_schema_and_nulls(tiny_dataset, tiny_split):
    names = [c.name for c in tiny_dataset.classes]
    model = micro_model(class_names=names)
    rep = evaluate(model, tiny_dataset, tiny_split, seed=3, config_hash="cafe")
    data = json.loads(rep.to_json())
    for key in ("map_all", "map_at_200", "p_at_100", "p_at_200", "acc_at_1",
                "acc_at_5", "frechet", "protocol", "config_hash", "seed"):
        assert key in data
    assert data["protocol"] == "zs"
    assert data["acc_at_1"] is None          # class-level protocol
    assert data["map_all"] is not None
    assert data["config_hash"] == "cafe" and data["seed"] == 3
    assert data["map_at_200_degenerate"] is True  # tiny gallery


def test_fg_report_uses_instance_accuracy(tiny_dataset):
    from sketchprompt.data import make_splits
    names = [c.name for c in tiny_dataset.classes]
    split = make_splits(tiny_dataset.classes, 3, "fg", seed=0)
    model = micro_model(class_names=names)
    rep = evaluate(model, tiny_dataset, split)
    assert rep.acc_at_1 is not None and rep.acc_at_5 is not None
    assert rep.map_all is None


def test_protocol_mismatch_rejected(tiny_dataset, tiny_split):
    names = [c.name for c in tiny_dataset.classes]
    model = micro_model(class_names=names)
    with pytest.raises(ValueError, match="protocol"):
        evaluate(model, tiny_dataset, tiny_split, protocol="fg")


def test_evaluate_deterministic(tiny_dataset, tiny_split):
    names = [c.name for c in tiny_dataset.classes]
    a = evaluate(micro_model(class_names=names), tiny_dataset, tiny_split).to_json()
    b = evaluate(micro_model(class_names=names), tiny_dataset, tiny_split).to_json()
    assert a == b


def test_gzs_gallery_includes_seen(tiny_dataset):
    from sketchprompt.data import make_splits
    names = [c.name for c in tiny_dataset.classes]
    split = make_splits(tiny_dataset.classes, 3, "gzs", seed=0)
    model = micro_model(class_names=names)
    rep = evaluate(model, tiny_dataset, split)
    assert rep.protocol == "gzs"
    # 4 classes x 6 instances in gallery vs 1 unseen class x 6 queries:
    # precision@100 is bounded by 6/100 with seen distractors present
    assert rep.p_at_100 <= 0.06 + 1e-12


def test_embedding_dump_format(tmp_path, tiny_dataset, tiny_split):
    names = [c.name for c in tiny_dataset.classes]
    model = micro_model(class_names=names)
    seen_names = [tiny_dataset.class_name(c) for c in tiny_split.seen_ids]
    keys = [(tiny_split.seen_ids[0], i) for i in range(2)]
    gal = embed_gallery(model, tiny_dataset, keys, "photo", "zs", seen_names)
    path = tmp_path / "emb.csv"
    dump_embeddings(path, gal)
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    assert header[:3] == ["id", "domain", "class"]
    assert header[3] == "e0" and len(header) == 3 + gal.embeddings.shape[1]
    assert len(lines) == 1 + len(keys)
    row = lines[1].split(",")
    assert row[1] == "photo"
    assert np.allclose([float(v) for v in row[3:]], gal.embeddings[0])
