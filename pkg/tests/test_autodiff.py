"""Differentiation engine: finite-difference agreement, broadcasting rules,
and the composite ops the encoders are built from."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchprompt import autodiff as ad
from sketchprompt.autodiff import Parameter, Tensor, grad_check


def _rand(rng, *shape):
    return rng.normal(size=shape)


# -- finite-difference agreement ---------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_fd_agreement_composite_graph(seed):
    """A graph mixing most primitives matches central differences."""
    rng = np.random.default_rng(seed)
    w = Parameter(_rand(rng, 4, 5), True, "w")
    b = Parameter(_rand(rng, 5), True, "b")
    x = Tensor(_rand(rng, 3, 4))

    def f():
        h = ad.relu(ad.add(ad.matmul(x, w.value), b.value))
        h = ad.layer_norm(h, Tensor(np.ones(5)), Tensor(np.zeros(5)))
        p = ad.softmax(h, axis=-1)
        return ad.tmean(ad.tsum(ad.square(p), axis=-1))

    report = grad_check(f, [w, b], h=1e-5)
    assert max(report.values()) < 1e-6


@pytest.mark.parametrize("op", ["exp", "log", "sqrt", "div"])
def test_fd_agreement_scalar_ops(op):
    rng = np.random.default_rng(hash(op) % 2**32)
    p = Parameter(rng.uniform(0.5, 2.0, size=(3, 3)), True, "p")

    def f():
        v = p.value
        if op == "exp":
            out = ad.exp(v)
        elif op == "log":
            out = ad.log(v)
        elif op == "sqrt":
            out = ad.sqrt(v)
        else:
            out = ad.div(1.0, v)
        return ad.tsum(out)

    assert max(grad_check(f, [p]).values()) < 1e-7


def test_fd_agreement_attention():
    rng = np.random.default_rng(3)
    q = Parameter(_rand(rng, 2, 4, 6), True, "q")
    k = Parameter(_rand(rng, 2, 4, 6), True, "k")
    v = Parameter(_rand(rng, 2, 4, 6), True, "v")

    def f():
        return ad.tmean(ad.attention(q.value, k.value, v.value, heads=2))

    assert max(grad_check(f, [q, k, v], max_entries_per_param=12).values()) < 1e-6


def test_fd_agreement_cross_entropy():
    rng = np.random.default_rng(4)
    logits = Parameter(_rand(rng, 5, 7), True, "logits")
    target = np.eye(7)[rng.integers(7, size=5)]

    def f():
        return ad.tmean(ad.cross_entropy(logits.value, target, axis=-1))

    assert max(grad_check(f, [logits]).values()) < 1e-7


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_fd_agreement_cosine(seed):
    rng = np.random.default_rng(seed)
    a = Parameter(rng.normal(size=4) + 0.1, True, "a")
    b = Tensor(rng.normal(size=4) + 0.1)

    def f():
        return ad.cosine_similarity(a.value, b)

    assert max(grad_check(f, [a]).values()) < 1e-6


# -- broadcasting rules ------------------------------------------------------


def test_suffix_broadcast_bias():
    x = Tensor(np.ones((2, 3, 4)), requires_grad=True)
    b = Tensor(np.arange(4.0), requires_grad=True)
    out = ad.tsum(ad.add(x, b))
    out.backward()
    assert b.grad.shape == (4,)
    assert np.allclose(b.grad, 6.0)  # 2*3 summed positions each


def test_keepdims_broadcast():
    x = Tensor(np.ones((3, 4)), requires_grad=True)
    m = Tensor(np.ones((3, 1)))
    out = ad.sub(x, m)
    assert out.shape == (3, 4)


def test_incompatible_shapes_rejected():
    with pytest.raises(ValueError, match="incompatible"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))


def test_explicit_broadcast_to():
    x = Tensor(np.ones((1, 3)), requires_grad=True)
    out = ad.tsum(ad.broadcast_to(x, (4, 3)))
    out.backward()
    assert np.allclose(x.grad, 4.0)


# -- composite semantics -----------------------------------------------------


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 6))
    p1 = ad.softmax(Tensor(x)).data
    p2 = ad.softmax(Tensor(x + 123.4)).data
    assert np.allclose(p1.sum(axis=-1), 1.0)
    assert np.allclose(p1, p2)


def test_softmax_extreme_logits_finite():
    p = ad.softmax(Tensor(np.array([1e4, 0.0, -1e4]))).data
    assert np.isfinite(p).all() and abs(p.sum() - 1.0) < 1e-12


def test_softmax_invalid_axis():
    with pytest.raises(ValueError):
        ad.softmax(Tensor(np.ones(3)), axis=2)


def test_layer_norm_output_statistics():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(2.0, 3.0, size=(4, 8)))
    y = ad.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_layer_norm_shape_validation():
    with pytest.raises(ValueError):
        ad.layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


def test_cross_entropy_rejects_non_one_hot():
    logits = Tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError, match="one-hot"):
        ad.cross_entropy(logits, np.full((2, 3), 0.5))


def test_cross_entropy_uniform_logits_value():
    ce = ad.cross_entropy(Tensor(np.zeros(4)), np.eye(4)[1]).item()
    assert abs(ce - np.log(4)) < 1e-12


def test_cosine_zero_vector_rejected():
    with pytest.raises(ValueError, match="zero vector"):
        ad.cosine_similarity(Tensor(np.zeros(3)), Tensor(np.ones(3)))


def test_l2_normalize_unit_rows():
    rng = np.random.default_rng(2)
    y = ad.l2_normalize(Tensor(rng.normal(size=(6, 5)))).data
    assert np.allclose((y ** 2).sum(axis=-1), 1.0)


def test_attention_rows_convex_in_values():
    """With constant values the attention output is that constant."""
    rng = np.random.default_rng(5)
    q = Tensor(rng.normal(size=(3, 4, 8)))
    k = Tensor(rng.normal(size=(3, 4, 8)))
    v = Tensor(np.full((3, 4, 8), 2.5))
    out = ad.attention(q, k, v, heads=4).data
    assert np.allclose(out, 2.5)


def test_attention_dim_validation():
    x = Tensor(np.ones((2, 3, 7)))
    with pytest.raises(ValueError, match="divisible"):
        ad.attention(x, x, x, heads=2)


# -- graph mechanics ---------------------------------------------------------


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        x.backward()


def test_gradients_accumulate_until_zeroed():
    x = Tensor(np.array(2.0), requires_grad=True)
    for _ in range(3):
        ad.square(x).backward()
    assert x.grad == pytest.approx(12.0)
    x.zero_grad()
    assert x.grad is None


def test_frozen_leaf_receives_no_grad():
    p = Parameter(np.ones(3), trainable=False, name="frozen")
    q = Parameter(np.ones(3), trainable=True, name="live")
    ad.tsum(ad.mul(p.value, q.value)).backward()
    assert p.value.grad is None
    assert np.allclose(q.value.grad, 1.0)


def test_reused_subexpression_grad():
    """A node consumed twice contributes twice to its parents."""
    x = Tensor(np.array(3.0), requires_grad=True)
    y = ad.mul(x, 2.0)
    ad.add(y, y).backward()
    assert x.grad == pytest.approx(4.0)


def test_getitem_scatter_accumulates_duplicates():
    x = Tensor(np.arange(4.0), requires_grad=True)
    idx = np.array([1, 1, 2])
    ad.tsum(x[idx]).backward()
    assert np.allclose(x.grad, [0.0, 2.0, 1.0, 0.0])


def test_grad_check_excuses_kink_with_correct_slope():
    # relu evaluated exactly at its kink: the central difference is 0.5, but
    # the analytic subgradient 0.0 lies inside the one-sided slope bracket
    # [0, 1], so the entry is excused rather than reported as a mismatch
    p = Parameter(np.zeros(1), True, "p")
    report = grad_check(lambda: ad.tsum(ad.relu(p.value)), [p], h=1e-5)
    assert report["p"] < 1e-6


def test_grad_check_catches_wrong_gradient_at_smooth_point():
    p = Parameter(np.array([1.5]), True, "p")

    def f():
        # linear op whose hand-written backward is wrong by 1.5x
        def back(g):
            return (g * 3.0,)

        return Tensor._make(p.value.data * 2.0, (p.value,), back)

    assert grad_check(f, [p], h=1e-5)["p"] > 0.3


def test_grad_check_catches_wrong_gradient_at_kink():
    # a kinked op whose claimed slope falls outside the one-sided bracket
    # [0, 1] must still be reported even though the point is non-smooth
    p = Parameter(np.zeros(1), True, "p")

    def f():
        mask = p.value.data > 0

        def back(g):
            return (g * 5.0,)

        return Tensor._make(np.where(mask, p.value.data, 0.0).sum(), (p.value,), back)

    assert grad_check(f, [p], h=1e-5)["p"] > 0.5


def test_grad_check_rejects_bad_h():
    p = Parameter(np.ones(2), True, "p")
    with pytest.raises(ValueError):
        grad_check(lambda: ad.tsum(p.value), [p], h=0.0)


def test_determinism_same_graph_same_grads():
    rng = np.random.default_rng(9)
    data = rng.normal(size=(4, 4))

    def run():
        x = Tensor(data.copy(), requires_grad=True)
        ad.tmean(ad.softmax(ad.matmul(x, x))).backward()
        return x.grad.copy()

    assert np.array_equal(run(), run())
