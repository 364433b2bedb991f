"""Tape-based reverse-mode differentiation over numpy arrays.

Operations on :class:`Tensor` record themselves on the active :class:`Tape`
when at least one input requires a gradient. ``Tape.backward`` walks the
records in reverse and accumulates vector-Jacobian products. Without an
active tape the same code runs as plain numpy.
"""

from __future__ import annotations

import numpy as np

_active: list = []


class Tape:
    """Records primitive operations; use as a context manager."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.pop()
        return False

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise ValueError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for out, parents, vjp in reversed(self.records):
            if out.grad is None:
                continue
            grads = vjp(out.grad)
            for parent, g in zip(parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                g = _unbroadcast(g, parent.data.shape)
                parent.grad = g if parent.grad is None else parent.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, vjp) -> Tensor:
    """Wrap an op result, registering it on the tape when gradients are needed."""
    needs = bool(_active) and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        _active[-1].records.append((out, parents, vjp))
    return out


# -- elementwise arithmetic ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _record(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def power(a, k: float) -> Tensor:
    a = as_tensor(a)
    return _record(a.data**k, (a,), lambda g: (g * k * a.data ** (k - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    # 1 / (1 + exp(-x)) in place; exp overflow gives the correct limit 0
    s = np.negative(x)
    with np.errstate(over="ignore"):
        np.exp(s, out=s)
    s += 1.0
    np.divide(1.0, s, out=s)
    return s


def _softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _record(_softplus(a.data), (a,), lambda g: (g * _sigmoid(a.data),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s

    def vjp(g):
        # d/da a*s(a) = s + out * (1 - s)
        d = 1.0 - s
        d *= out
        d += s
        d *= g
        return (d,)

    return _record(out, (a,), vjp)


def clip_min(a, lo: float) -> Tensor:
    """max(a, lo); the gradient is passed only where a > lo."""
    a = as_tensor(a)
    keep = a.data > lo
    return _record(np.where(keep, a.data, lo), (a,), lambda g: (g * keep,))


# -- shape and reductions --------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
        return (full,)

    return _record(a.data[idx], (a,), vjp)


def _fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(parts, axis=-1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), vjp)


def stack(parts, axis=0) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _record(np.stack([p.data for p in parts], axis=axis), tuple(parts), vjp)


# -- linear algebra and fused layers ------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _record(a.data @ b.data, (a, b), vjp)


def linear(x, w, b) -> Tensor:
    """x @ w + b over the last axis of x (any leading shape)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, x.data.shape[-1])
    out = (x2 @ w.data + b.data).reshape(lead + (w.data.shape[1],))

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ w.data.T).reshape(x.data.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _record(out, (x, w, b), vjp)


def gru_cell(x, h, w_in, w_hid, b_in, b_hid) -> Tensor:
    """One gated recurrent unit step.

    Gate order in the fused weights is (reset, update, candidate):
    r = sig(x Wr + h Ur + br), z = sig(x Wz + h Uz + bz),
    n = tanh(x Wn + bn_in + r * (h Un + bn_hid)), h' = (1 - z) n + z h.
    """
    x, h, w_in, w_hid, b_in, b_hid = (as_tensor(v) for v in (x, h, w_in, w_hid, b_in, b_hid))
    H = h.data.shape[-1]
    gi = x.data @ w_in.data + b_in.data
    gh = h.data @ w_hid.data + b_hid.data
    r = _sigmoid(gi[:, :H] + gh[:, :H])
    z = _sigmoid(gi[:, H:2 * H] + gh[:, H:2 * H])
    hn = gh[:, 2 * H:]
    n = np.tanh(gi[:, 2 * H:] + r * hn)
    out = (1.0 - z) * n + z * h.data

    def vjp(g):
        dn = g * (1.0 - z)
        dz = g * (h.data - n)
        da_n = dn * (1.0 - n * n)
        dr = da_n * hn
        da_r = dr * r * (1.0 - r)
        da_z = dz * z * (1.0 - z)
        dgi = np.concatenate([da_r, da_z, da_n], axis=1)
        dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
        dx = dgi @ w_in.data.T if x.requires_grad else None
        dh = dgh @ w_hid.data.T + g * z if h.requires_grad else None
        dw_in = x.data.T @ dgi if w_in.requires_grad else None
        dw_hid = h.data.T @ dgh if w_hid.requires_grad else None
        return dx, dh, dw_in, dw_hid, dgi.sum(axis=0), dgh.sum(axis=0)

    return _record(out, (x, h, w_in, w_hid, b_in, b_hid), vjp)
