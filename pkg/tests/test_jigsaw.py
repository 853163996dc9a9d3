"""Permutation table construction, tile shuffling, and the solver head."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchprompt import autodiff as ad
from sketchprompt.autodiff import Tensor
from sketchprompt.jigsaw import (JigsawSolver, PermutationTable, build_table,
                                 fuse, shuffle)


# -- table construction ------------------------------------------------------


def test_g2_table_is_full_s4():
    t = build_table(2)
    assert t.size == 24
    assert np.array_equal(t.perms[0], np.arange(4))
    assert len({tuple(p) for p in t.perms}) == 24


def test_g3_table_hamming_floor():
    t = build_table(3, count=16, seed=0)
    assert t.size == 16
    assert np.array_equal(t.perms[0], np.arange(9))
    floor = 9 // 2
    for i in range(t.size):
        for j in range(i + 1, t.size):
            assert (t.perms[i] != t.perms[j]).sum() >= floor


def test_table_determinism():
    a = build_table(3, count=10, seed=4).perms
    b = build_table(3, count=10, seed=4).perms
    assert np.array_equal(a, b)


def test_table_count_validation():
    with pytest.raises(ValueError, match="only"):
        build_table(2, count=25)
    with pytest.raises(ValueError, match="at least 2"):
        build_table(1)


def test_table_text_round_trip(tmp_path):
    t = build_table(2)
    path = tmp_path / "perms.txt"
    t.export_text(path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 24 and lines[0] == "0 1 2 3"
    back = PermutationTable.import_text(path, 2)
    assert np.array_equal(back.perms, t.perms)


# -- shuffle -----------------------------------------------------------------


def test_shuffle_identity_is_noop(rng):
    t = build_table(2)
    img = rng.uniform(size=(8, 8))
    assert np.array_equal(shuffle(img, 0, t), img)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 23), st.integers(0, 10**6))
def test_shuffle_is_pixel_bijection(perm_index, seed):
    """Shuffling permutes pixel values: sorted multisets agree."""
    t = build_table(2)
    img = np.random.default_rng(seed).uniform(size=(8, 8))
    out = shuffle(img, perm_index, t)
    assert np.array_equal(np.sort(out.ravel()), np.sort(img.ravel()))


def test_shuffle_round_trip_inverse(rng):
    t = build_table(2)
    img = rng.uniform(size=(8, 8))
    for k in range(24):
        perm = t.perms[k]
        inv = np.argsort(perm)
        inv_k = int(np.where((t.perms == inv).all(axis=1))[0][0])
        assert np.array_equal(shuffle(shuffle(img, k, t), inv_k, t), img)


def test_shuffle_tile_placement_oracle():
    """Output tile j must equal input tile perm[j], checked directly."""
    t = build_table(2)
    img = np.arange(16.0).reshape(4, 4)
    k = 5
    out = shuffle(img, k, t)
    tiles = [img[r * 2:(r + 1) * 2, c * 2:(c + 1) * 2] for r in range(2) for c in range(2)]
    for j in range(4):
        r, c = divmod(j, 2)
        assert np.array_equal(out[r * 2:(r + 1) * 2, c * 2:(c + 1) * 2],
                              tiles[t.perms[k][j]])


def test_shuffle_batched_per_sample(rng):
    t = build_table(2)
    imgs = rng.uniform(size=(3, 8, 8))
    idx = np.array([0, 5, 11])
    out = shuffle(imgs, idx, t)
    for i in range(3):
        assert np.array_equal(out[i], shuffle(imgs[i], int(idx[i]), t))


def test_shuffle_indivisible_rejected():
    t = build_table(2)
    with pytest.raises(ValueError, match="divisible"):
        shuffle(np.zeros((7, 8)), 0, t)


# -- fuse + solver -----------------------------------------------------------


def test_fuse_ordering():
    a = Tensor(np.full((3, 4), 1.0))
    b = Tensor(np.full((3, 4), 2.0))
    pair = fuse(a, b).data
    assert pair.shape == (3, 2, 4)
    assert np.allclose(pair[:, 0], 1.0) and np.allclose(pair[:, 1], 2.0)


def test_solver_logit_shape_and_trainability():
    t = build_table(2)
    s = JigsawSolver(8, t, seed=0)
    pair = fuse(Tensor(np.random.default_rng(0).normal(size=(5, 8))),
                Tensor(np.random.default_rng(1).normal(size=(5, 8))))
    logits = s(pair)
    assert logits.shape == (5, 24)
    assert all(p.trainable for p in s.parameters())


def test_solver_untrained_ce_near_uniform():
    """At the tiny initialization scale the untrained solver is close to a
    uniform guesser: CE within 25% of ln P."""
    t = build_table(2)
    s = JigsawSolver(8, t, seed=0)
    rng = np.random.default_rng(2)
    pair = fuse(Tensor(rng.normal(size=(64, 8))), Tensor(rng.normal(size=(64, 8))))
    target = np.eye(24)[rng.integers(24, size=64)]
    ce = ad.tmean(ad.cross_entropy(s(pair), target, axis=-1)).item()
    assert abs(ce - np.log(24)) < 0.25 * np.log(24)


def test_solver_learns_synthetic_rule():
    """A linearly decodable pair -> index rule is learnable way above chance."""
    t = build_table(2)
    s = JigsawSolver(8, t, seed=1)
    rng = np.random.default_rng(3)
    protos = rng.normal(size=(24, 8))

    def batch(n, gen):
        idx = gen.integers(24, size=n)
        ctx = gen.normal(scale=0.05, size=(n, 8))
        prm = protos[idx] + gen.normal(scale=0.05, size=(n, 8))
        return fuse(Tensor(ctx), Tensor(prm)), idx

    from sketchprompt.train import Adam
    from sketchprompt.autodiff import Parameter
    opt = Adam(s.parameters(), lr=0.01)
    for _ in range(150):
        opt.zero_grad()
        pair, idx = batch(64, rng)
        loss = ad.tmean(ad.cross_entropy(s(pair), np.eye(24)[idx], axis=-1))
        loss.backward()
        opt.step()
    test_pair, test_idx = batch(256, np.random.default_rng(99))
    acc = (s(test_pair).data.argmax(axis=-1) == test_idx).mean()
    assert acc > 3.0 / 24.0
