"""Dense float64 tensors with reverse-mode differentiation.

Every operation records its parents and a closure mapping the output
gradient to one gradient per parent.  ``Tensor.backward`` walks the graph
in reverse topological order and accumulates into the ``grad`` of leaves
that have ``requires_grad`` set.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=DTYPE)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


# reductions and shape plumbing

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def flip(a: Tensor, axis: int) -> Tensor:
    return _make(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),))


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None
               for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    basic = _is_basic(idx)

    def back(g):
        if basic:
            out = np.zeros_like(a.data)
            out[idx] = g
            return (out,)
        pos = np.arange(a.data.size).reshape(a.shape)[idx]
        return (_scatter_add(a.shape, pos, g),)

    return _make(a.data[idx].copy(), (a,), back)


slice_ = getitem


def _scatter_add(shape: tuple, positions: np.ndarray, g: np.ndarray) -> np.ndarray:
    size = int(np.prod(shape))
    return np.bincount(positions.reshape(-1), weights=g.reshape(-1), minlength=size).reshape(shape)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    indices = np.asarray(indices, dtype=np.intp)

    def back(g):
        pos = np.take(np.arange(a.data.size).reshape(a.shape), indices, axis=axis)
        return (_scatter_add(a.shape, pos, g),)

    return _make(np.take(a.data, indices, axis=axis), (a,), back)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            grads.append(g[tuple(sl)])
        return grads

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    return _make(np.stack([t.data for t in tensors], axis=axis), tensors,
                 lambda g: [np.take(g, i, axis=axis) for i in range(len(tensors))])


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant (no gradient there)."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    return _make(np.where(mask, value, a.data), (a,), lambda g: (np.where(mask, 0.0, g),))


# linear algebra

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _make(a.data @ b.data, (a, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``w`` stored as (in, out)."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


# normalizers

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_axis(a, axis)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_axis(a, axis)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make(out, (a,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def _check_axis(a: Tensor, axis: int) -> None:
    if not -a.ndim <= axis < a.ndim:
        raise IndexError(f"axis {axis} out of range for shape {a.shape}")


LAYER_NORM_EPS = 1e-12


def layer_norm(a: Tensor, axis: int = -1, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize slices along ``axis`` to zero mean and unit variance (no affine)."""
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    y = xc * inv

    def back(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = (g * y).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _make(y, (a,), back)


# losses

def cross_entropy_from_logits(logits: Tensor, target, axis: int = -1) -> Tensor:
    """Per-slice ``-log softmax(logits)[target]``; ``target`` indexes ``axis``."""
    lp = log_softmax(logits, axis)
    target = np.asarray(target, dtype=np.intp)
    idx = np.expand_dims(target, axis)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, idx, 1.0, axis=axis)
    return neg(tsum(mul(lp, onehot), axis=axis))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def binary_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Elementwise BCE between ``sigmoid(logits)`` and targets in [0, 1]."""
    y = np.broadcast_to(np.asarray(targets, dtype=DTYPE), logits.shape)
    x = logits.data
    with np.errstate(invalid="ignore"):
        out = y * _softplus(-x) + (1.0 - y) * _softplus(x)
    out = np.where(y == 1.0, _softplus(-x), np.where(y == 0.0, _softplus(x), out))
    p = _sigmoid(x)
    return _make(out, (logits,), lambda g: (g * (p - y),))


# convolution

def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Same-padded 1-D convolution over time.

    ``x`` is (T, c_in) or (B, T, c_in); ``w`` is (k, c_in, c_out).  The
    output has ceil(T / stride) frames.
    """
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or xd.shape[1] < 1:
        raise DimensionError(f"conv1d expects (B, T, c_in) with T >= 1, got {x.shape}")
    k, c_in, c_out = w.shape
    if xd.shape[2] != c_in:
        raise DimensionError(f"conv1d input width {xd.shape[2]} != kernel width {c_in}")
    bsz, t_in, _ = xd.shape
    t_out = -(-t_in // stride)
    pad = max((t_out - 1) * stride + k - t_in, 0)
    left = pad // 2
    xp = np.zeros((bsz, t_in + pad, c_in))
    xp[:, left:left + t_in] = xd
    span = stride * (t_out - 1) + 1
    out = np.zeros((bsz, t_out, c_out))
    for j in range(k):
        out += xp[:, j:j + span:stride] @ w.data[j]
    if b is not None:
        out += b.data
    if squeeze:
        out = out[0]

    def back(g):
        g3 = g[None] if squeeze else g
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        flat_g = g3.reshape(-1, c_out)
        for j in range(k):
            sl = xp[:, j:j + span:stride]
            gw[j] = sl.reshape(-1, c_in).T @ flat_g
            gxp[:, j:j + span:stride] += g3 @ w.data[j].T
        gx = gxp[:, left:left + t_in]
        if squeeze:
            gx = gx[0]
        gb = flat_g.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, back)


# recurrent scan

def gru_scan(x: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor,
             h0: Tensor | None = None) -> Tensor:
    """Run a GRU over (B, T, d_in) and return all hidden states (B, T, h).

    Gate layout along the last weight axis is [reset, update, candidate];
    ``h' = (1 - u) * n + u * h``.  The backward pass is hand-written BPTT.
    """
    if x.ndim != 3:
        raise DimensionError(f"gru_scan expects (B, T, d_in), got {x.shape}")
    bsz, steps, d_in = x.shape
    hid = w_hh.shape[0]
    if w_ih.shape != (d_in, 3 * hid) or w_hh.shape != (hid, 3 * hid):
        raise DimensionError(
            f"gru weights {w_ih.shape}/{w_hh.shape} do not fit input width {d_in}, hidden {hid}")
    # time-major buffers keep every per-step slice contiguous
    gi = np.ascontiguousarray(np.swapaxes(x.data @ w_ih.data + b_ih.data, 0, 1))
    h = np.zeros((bsz, hid)) if h0 is None else np.broadcast_to(h0.data, (bsz, hid)).copy()
    hs = np.empty((steps + 1, bsz, hid))
    hs[0] = h
    ru = np.empty((steps, bsz, 2 * hid))
    ns = np.empty((steps, bsz, hid))
    ghn = np.empty((steps, bsz, hid))
    whh = w_hh.data
    bhh = b_hh.data
    for t in range(steps):
        gh = h @ whh + bhh
        g = gi[t]
        gates = _sigmoid(g[:, :2 * hid] + gh[:, :2 * hid])
        r = gates[:, :hid]
        u = gates[:, hid:]
        n = np.tanh(g[:, 2 * hid:] + r * gh[:, 2 * hid:])
        h = (1.0 - u) * n + u * h
        ru[t], ns[t], ghn[t] = gates, n, gh[:, 2 * hid:]
        hs[t + 1] = h
    out = np.ascontiguousarray(np.swapaxes(hs[1:], 0, 1))

    def back(gout):
        gout = np.swapaxes(gout, 0, 1)
        dgi = np.empty((steps, bsz, 3 * hid))
        dgh_all = np.empty((steps, bsz, 3 * hid))
        dh_next = np.zeros((bsz, hid))
        for t in range(steps - 1, -1, -1):
            dh = gout[t] + dh_next
            hp = hs[t]
            r, u, n = ru[t, :, :hid], ru[t, :, hid:], ns[t]
            dan = dh * (1.0 - u) * (1.0 - n * n)
            dar = dan * ghn[t] * r * (1.0 - r)
            dau = dh * (hp - n) * u * (1.0 - u)
            dgh = dgh_all[t]
            dgh[:, :hid] = dar
            dgh[:, hid:2 * hid] = dau
            dgh[:, 2 * hid:] = dan * r
            dgi[t, :, :2 * hid] = dgh[:, :2 * hid]
            dgi[t, :, 2 * hid:] = dan
            dh_next = dh * u + dgh @ whh.T
        flat_gh = dgh_all.reshape(-1, 3 * hid)
        dwhh = hs[:-1].reshape(-1, hid).T @ flat_gh
        dbhh = flat_gh.sum(axis=0)
        dgi = np.swapaxes(dgi, 0, 1)
        flat = dgi.reshape(-1, 3 * hid)
        dx = dgi @ w_ih.data.T
        dwih = x.data.reshape(-1, d_in).T @ flat
        dbih = flat.sum(axis=0)
        grads = [dx, dwih, dwhh, dbih, dbhh]
        if h0 is not None:
            grads.append(_unbroadcast(dh_next, h0.shape))
        return grads

    parents = [x, w_ih, w_hh, b_ih, b_hh] + ([h0] if h0 is not None else [])
    return _make(out, parents, back)


def gru_cell(x: Tensor, h: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor,
             b_hh: Tensor) -> Tensor:
    """One GRU step composed from primitive ops (same gate layout as ``gru_scan``)."""
    hid = h.shape[-1]
    if w_ih.shape[0] != x.shape[-1] or w_hh.shape != (hid, 3 * hid):
        raise DimensionError(
            f"gru_cell weights {w_ih.shape}/{w_hh.shape} do not fit x {x.shape}, h {h.shape}")
    x2 = reshape(x, (-1, x.shape[-1]))
    h2 = reshape(h, (-1, hid))
    gi = linear(x2, w_ih, b_ih)
    gh = linear(h2, w_hh, b_hh)
    r = sigmoid(gi[:, :hid] + gh[:, :hid])
    u = sigmoid(gi[:, hid:2 * hid] + gh[:, hid:2 * hid])
    n = tanh(gi[:, 2 * hid:] + r * gh[:, 2 * hid:])
    out = (1.0 - u) * n + u * h2
    return reshape(out, h.shape)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, scale: float | None = None):
    """softmax(q k^T * scale) v; returns (output, weights)."""
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    w = softmax(matmul(q, swapaxes(k, -1, -2)) * scale, axis=-1)
    return matmul(w, v), w
