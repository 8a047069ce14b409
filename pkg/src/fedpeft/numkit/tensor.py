"""Dense tensors with tape-based reverse-mode differentiation.

Only the operations the backbone needs are provided. Each op records its
parents and a closure mapping the output gradient to parent gradients;
nothing is recorded when no parent requires a gradient, so frozen-only
computations keep no activations alive.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import memory

_dtype = np.dtype(np.float32)


def default_dtype():
    return _dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the working float width (gradient checks use float64)."""
    global _dtype
    prev = _dtype
    _dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _dtype = prev


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_ctx", "_done", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._ctx = None
        self._done = False
        memory.register(self, arr.nbytes)

    @property
    def shape(self):
        return tuple(self.data.shape)

    @property
    def numel(self):
        return int(self.data.size)

    @property
    def nbytes(self):
        return int(self.data.nbytes)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, name={self.name!r})"

    def backward(self):
        """Accumulate gradients of this scalar into every trainable leaf."""
        if self._done:
            raise RuntimeError("backward() called twice on the same graph; run a new forward pass")
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        self._done = True
        if self._ctx is None:
            return
        order = _topo(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            parents, fn = node._ctx
            node._ctx = None
            if g is None:
                continue
            pgrads = fn(g)
            for p, pg in zip(parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if p._ctx is None:
                    _check(pg, "gradient")
                    p.grad = pg.astype(_dtype, copy=True) if p.grad is None else p.grad + pg
                else:
                    key = id(p)
                    grads[key] = pg if key not in grads else grads[key] + pg


def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._ctx[0]:
            if p._ctx is not None and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _check(arr, what="tensor"):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {what}")


def _result(data, parents, backward_fn):
    _check(data)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._ctx = (parents, backward_fn)
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                              _unbroadcast(g * ad, bd.shape) if b.requires_grad else None))


def scale(a, c):
    c = float(c)
    return _result(a.data * _dtype.type(c), (a,), lambda g: (g * _dtype.type(c),))


def sum(a):  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _result(np.asarray(a.data.sum(), dtype=_dtype), (a,),
                   lambda g: (np.broadcast_to(g, shape).astype(_dtype),))


def mean(a):
    n = a.data.size
    return scale(sum(a), 1.0 / n)


def reshape(a, shape):
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _result(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                   lambda g: (g.transpose(inv),))


def gelu(a):
    from . import kernels
    x = a.data
    return _result(kernels.gelu_forward(x), (a,), lambda g: (kernels.gelu_backward(g, x),))


def dropout(a, mask, rate):
    """Inverted dropout with a caller-supplied keep mask."""
    keep = (mask.astype(_dtype) / _dtype.type(1.0 - rate))
    return _result(a.data * keep, (a,), lambda g: (g * keep,))


# ----------------------------------------------------------------- linear algebra

def matmul(a, b):
    """Matrix product with NumPy batching rules on the leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), back)


def linear(x, w):
    """``x @ w.T`` for a weight stored as (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear shape mismatch: {x.shape} vs weight {w.shape}")
    xd, wd = x.data, w.data

    def back(g):
        gx = g @ wd if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])
        return gx, gw

    return _result(xd @ wd.T, (x, w), back)


def qlinear(x, qw):
    """``x @ W.T`` where W is held as a :class:`QuantizedTensor`.

    The dequantized weight exists only inside the forward call and is
    rebuilt in the backward pass, so it never stays resident.
    """
    out_dim, in_dim = qw.shape
    if x.shape[-1] != in_dim:
        raise ValueError(f"qlinear shape mismatch: {x.shape} vs weight {qw.shape}")
    w = qw.dequantize_array(_dtype)
    memory.transient(w.nbytes)
    y = x.data @ w.T
    del w

    def back(g):
        wb = qw.dequantize_array(_dtype)
        memory.transient(wb.nbytes)
        return (g @ wb,)

    return _result(y, (x,), back)


def embedding(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _result(table.data[ids], (table,), back)


def gather_rows(x, bi, ti):
    """Select rows ``x[bi, ti]`` from a (B, T, D) tensor."""
    shape = x.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (bi, ti), g)
        return (out,)

    return _result(x.data[bi, ti], (x,), back)


def layernorm(x, gain, bias, eps=1e-5):
    from . import kernels
    shape = x.shape
    x2 = x.data.reshape(-1, shape[-1])
    y, xhat, rstd = kernels.layernorm_forward(x2, gain.data, bias.data, eps)
    gd = gain.data

    def back(g):
        dx, dg, db = kernels.layernorm_backward(g.reshape(-1, shape[-1]), xhat, rstd, gd)
        return dx.reshape(shape), dg, db

    return _result(y.reshape(shape), (x, gain, bias), back)


def causal_softmax(scores):
    """Row softmax over the last axis with future positions masked out."""
    from . import kernels
    p = kernels.causal_softmax_forward(scores.data)
    return _result(p, (scores,), lambda g: (kernels.causal_softmax_backward(g, p),))


# ----------------------------------------------------------------- losses

def _log_softmax(z):
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def cross_entropy_rows(logits, targets):
    """Per-row negative log-likelihood ``-log softmax(logits)[target]``."""
    targets = np.asarray(targets, dtype=np.int64)
    z = logits.data
    k = z.shape[-1]
    if targets.ndim != 1 or targets.shape[0] != z.shape[0]:
        raise ValueError("one target per logits row required")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise IndexError(f"target index out of range [0, {k})")
    logp = _log_softmax(z)
    rows = np.arange(z.shape[0])
    nll = -logp[rows, targets]

    def back(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        return (p * g[:, None],)

    return _result(nll, (logits,), back)


def softmax_cross_entropy(logits, gold):
    """Scalar loss ``-log softmax(logits)[gold]`` for one K-way logit vector."""
    logits = as_tensor(logits)
    if logits.data.ndim != 1 or logits.shape[0] < 2:
        raise ValueError("need a 1-D logit vector with at least 2 candidates")
    if not 0 <= int(gold) < logits.shape[0]:
        raise IndexError(f"gold index {gold} out of range [0, {logits.shape[0]})")
    row = reshape(logits, (1, logits.shape[0]))
    return reshape(cross_entropy_rows(row, [int(gold)]), ())


def segment_sum(values, segments, nseg):
    """Sum a 1-D tensor into ``nseg`` buckets by segment id."""
    segments = np.asarray(segments, dtype=np.int64)
    out = np.zeros(nseg, dtype=values.data.dtype)
    np.add.at(out, segments, values.data)
    return _result(out, (values,), lambda g: (g[segments],))
