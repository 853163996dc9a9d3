"""Dense-tensor reverse-mode differentiation engine.

Everything runs in float64 on numpy arrays.  A Tensor records the primitive
that produced it; calling ``backward`` on a scalar walks the recorded graph in
reverse topological order and accumulates gradients into the leaves that
requested them.  Gradients add across calls until explicitly zeroed.

Broadcasting is deliberately restricted: binary ops accept equal shapes,
python scalars, or a right operand whose shape is a trailing suffix of the
left one (the affine gain/bias case).  Anything else must go through an
explicit ``broadcast_to``.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- bookkeeping ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph construction --------------------------------------------------

    @staticmethod
    def _make(data, parents, backward_fn):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    # -- backward pass -------------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every reachable leaf with requires_grad."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate persistently
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
        # leaves that were also intermediate targets were handled above

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


class Parameter:
    """A named tensor with a frozen/trainable flag.

    ``trainable=False`` means the value never receives a persistent gradient
    and an optimizer step leaves it untouched.
    """

    def __init__(self, value, trainable=True, name=""):
        if not isinstance(value, Tensor):
            value = Tensor(value)
        value.requires_grad = bool(trainable)
        self.value = value
        self.trainable = bool(trainable)
        self.name = name

    def __repr__(self):
        kind = "trainable" if self.trainable else "frozen"
        return f"Parameter({self.name!r}, shape={self.value.shape}, {kind})"


# -- helpers -----------------------------------------------------------------


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_binary_shapes(a, b):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or b.data.size == 1 or a.data.size == 1:
        return
    # same-rank broadcast where dims match or are 1 (keepdims reductions)
    if len(sa) == len(sb) and all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb)):
        return
    # trailing-suffix broadcast (affine gain/bias)
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    raise ValueError(f"incompatible shapes for elementwise op: {sa} vs {sb}")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- primitives --------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._make(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._make(a.data - b.data, (a, b), back)


def neg(a):
    a = _as_tensor(a)
    return Tensor._make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return Tensor._make(a.data * b.data, (a, b), back)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary_shapes(a, b)

    def back(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return Tensor._make(a.data / b.data, (a, b), back)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def back(g):
        bd = b.data
        ad = a.data
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._make(a.data @ b.data, (a, b), back)


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)
    return Tensor._make(out_data, (a,), lambda g: (g * out_data,))


def log(a):
    a = _as_tensor(a)
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)
    return Tensor._make(out_data, (a,), lambda g: (g * (0.5 / out_data),))


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0

    def back(g):
        return (g * mask,)

    return Tensor._make(np.where(mask, a.data, 0.0), (a,), back)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    a = _as_tensor(a)
    inv = np.argsort(axes)
    return Tensor._make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, ax1, ax2):
    a = _as_tensor(a)
    return Tensor._make(
        np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),)
    )


def getitem(a, key):
    a = _as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return Tensor._make(a.data[key], (a,), back)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def broadcast_to(a, shape):
    a = _as_tensor(a)
    old = a.data.shape

    def back(g):
        return (_unbroadcast(g, old),)

    return Tensor._make(np.broadcast_to(a.data, shape).copy(), (a,), back)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    old = a.data.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, old).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, old).copy(),)

    return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def square(a):
    return mul(a, a)


# -- composites --------------------------------------------------------------


def softmax(x, axis=-1):
    """Softmax along ``axis``; rows sum to 1 and are shift invariant."""
    x = _as_tensor(x)
    if x.ndim == 0 or not (-x.ndim <= axis < x.ndim):
        raise ValueError(f"invalid softmax axis {axis} for shape {x.shape}")
    shift = np.max(x.data, axis=axis, keepdims=True)  # constant; cancels in the gradient
    e = exp(sub(x, Tensor(shift)))
    return div(e, tsum(e, axis=axis, keepdims=True))


def log_softmax(x, axis=-1):
    x = _as_tensor(x)
    if x.ndim == 0 or not (-x.ndim <= axis < x.ndim):
        raise ValueError(f"invalid softmax axis {axis} for shape {x.shape}")
    shift = np.max(x.data, axis=axis, keepdims=True)
    shifted = sub(x, Tensor(shift))
    lse = log(tsum(exp(shifted), axis=axis, keepdims=True))
    return sub(shifted, lse)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = _as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("layer_norm requires a non-empty last axis")
    gv = gain.value if isinstance(gain, Parameter) else _as_tensor(gain)
    bv = bias.value if isinstance(bias, Parameter) else _as_tensor(bias)
    if gv.shape != (x.shape[-1],) or bv.shape != (x.shape[-1],):
        raise ValueError("gain/bias length must equal the last-axis extent")
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(square(centered), axis=-1, keepdims=True)
    y = div(centered, sqrt(add(var, eps)))
    return add(mul(y, gv), bv)


def cross_entropy(logits, target_one_hot, axis=-1):
    """-log softmax(logits) at the one-hot position, summed over ``axis``.

    Returns a tensor with ``axis`` reduced (per-sample losses for batched
    input, a scalar for a single vector).
    """
    logits = _as_tensor(logits)
    tgt = target_one_hot.data if isinstance(target_one_hot, Tensor) else np.asarray(
        target_one_hot, dtype=np.float64
    )
    if tgt.shape != logits.shape:
        raise ValueError("logits and target shapes must agree")
    sums = tgt.sum(axis=axis)
    if not (np.allclose(sums, 1.0) and np.all((tgt == 0.0) | (tgt == 1.0))):
        raise ValueError("target must be one-hot")
    return neg(tsum(mul(log_softmax(logits, axis=axis), Tensor(tgt)), axis=axis))


def l2_normalize(x, axis=-1):
    n = sqrt(tsum(square(x), axis=axis, keepdims=True))
    return div(x, n)


def cosine_similarity(a, b, axis=-1):
    """Cosine of the angle between ``a`` and ``b`` along ``axis``."""
    a, b = _as_tensor(a), _as_tensor(b)
    na = np.sqrt((a.data ** 2).sum(axis=axis))
    nb = np.sqrt((b.data ** 2).sum(axis=axis))
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ValueError("cosine_similarity is undefined for a zero vector")
    dot = tsum(mul(a, b), axis=axis)
    denom = mul(sqrt(tsum(square(a), axis=axis)), sqrt(tsum(square(b), axis=axis)))
    return div(dot, denom)


def attention(q, k, v, heads, causal=False):
    """Multi-head scaled dot-product attention.

    q, k, v: (..., S, d) with d divisible by ``heads``.  Output has q's shape;
    per head, every output row is a convex combination of v rows.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    d = q.shape[-1]
    if k.shape != q.shape or v.shape != q.shape:
        raise ValueError("attention expects q, k, v of identical shape")
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by heads {heads}")
    seq = q.shape[-2]
    hd = d // heads
    batch = q.shape[:-2]

    def split_heads(t):
        t = reshape(t, batch + (seq, heads, hd))
        return swapaxes(t, -2, -3)  # (..., heads, S, hd)

    qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
    scores = mul(matmul(qh, swapaxes(kh, -1, -2)), 1.0 / np.sqrt(hd))
    if causal:
        mask = np.triu(np.full((seq, seq), -1e30), k=1)
        scores = add(scores, Tensor(mask))
    weights = softmax(scores, axis=-1)
    out = matmul(weights, vh)  # (..., heads, S, hd)
    out = swapaxes(out, -2, -3)
    return reshape(out, batch + (seq, d))


# -- verification ------------------------------------------------------------


def grad_check(f, params, h=1e-5, max_entries_per_param=None, seed=0):
    """Compare analytic gradients of ``f`` with central finite differences.

    ``f`` is a deterministic scalar-valued function of no arguments that
    reads the given parameters.  Returns {name: max relative error}; only
    trainable parameters are checked.  With ``max_entries_per_param`` set, a
    seeded random subset of entries is probed per parameter.

    Objectives built from hinges and rectifiers are only piecewise smooth.
    When the probed point sits within ``h`` of a kink, the central difference
    straddles two pieces and is not the derivative of either.  Suspect
    entries are therefore re-estimated with a 32x narrower stencil (a kink at
    finite distance from the point resolves under refinement), and entries
    whose one-sided slopes disagree -- a kink at the point itself -- are
    excused, but only if the analytic gradient lies inside the bracket of
    the two one-sided slopes.  A wrong
    analytic gradient still fails: at a smooth point the one-sided slopes
    agree with each other (no excuse), and at a kink a sign- or scale-wrong
    gradient falls outside the slope bracket.  This path can only skip an
    entry, never raise its reported error.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    for p in params:
        p.value.zero_grad()
    loss = f()
    loss.backward()
    rng = np.random.default_rng(seed)
    report = {}
    for p in params:
        if not p.trainable:
            continue
        analytic = p.value.grad
        if analytic is None:
            analytic = np.zeros_like(p.value.data)
        flat = p.value.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            idxs = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            idxs = np.arange(n)
        worst = 0.0
        aflat = analytic.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            hi = f().item()
            flat[i] = orig - h
            lo = f().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * h)
            # the floor matches the float64 central-difference noise floor at
            # h ~ 1e-5, so near-zero gradients are compared absolutely
            denom = max(abs(aflat[i]), abs(fd), 1e-6)
            err = abs(aflat[i] - fd) / denom
            if err > 1e-5:
                # suspect entry: a kink at finite distance from x makes the
                # wide stencil invalid but resolves under a narrower one
                hs = h / 32.0
                flat[i] = orig + hs
                hi_s = f().item()
                flat[i] = orig - hs
                lo_s = f().item()
                flat[i] = orig
                fd_s = (hi_s - lo_s) / (2.0 * hs)
                err_s = abs(aflat[i] - fd_s) / max(abs(aflat[i]), abs(fd_s), 1e-6)
                err = min(err, err_s)
            if err > 1e-5:
                # probe the outer intervals to distinguish a kink at x itself
                # (one-sided slopes disagree) from a genuine gradient mismatch
                flat[i] = orig + 2.0 * h
                hi2 = f().item()
                flat[i] = orig - 2.0 * h
                lo2 = f().item()
                flat[i] = orig
                fwd = (hi2 - hi) / h
                bwd = (lo - lo2) / h
                scale = max(abs(fwd), abs(bwd), 1e-6)
                if abs(fwd - bwd) > 1e-3 * scale:
                    slo, shi = sorted((fwd, bwd))
                    slack = 1e-2 * scale
                    if slo - slack <= aflat[i] <= shi + slack:
                        continue  # non-smooth point, analytic slope plausible
            worst = max(worst, err)
        report[p.name] = worst
        p.value.zero_grad()
    return report
