"""Reverse-mode autodiff over numpy arrays (NCHW layout).

Each op records its parents and a closure that pushes the output gradient
back into them.  ``backward`` walks the graph in reverse topological order.
The dtype follows the inputs, so float64 graphs are available for gradient
checks while training runs in float32.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        if isinstance(data, np.generic):  # 0-d arithmetic yields numpy scalars; keep their dtype
            data = np.asarray(data)
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x, dtype=np.float32) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward) -> Tensor:
    if not _GRAD_ENABLED or not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, True, tuple(parents), backward)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# elementwise / structural


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype if isinstance(a, Tensor) else np.float32)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from e
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from e
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(f"reshape {a.shape} -> {shape}") from e
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), back)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch("concat: " + ", ".join(str(t.shape) for t in tensors)) from e
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return _make(out, tuple(tensors), back)


def tsum(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.asarray(a.data.mean(), dtype=a.dtype), (a,), lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))


# ----------------------------------------------------------------------------
# activations


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form avoids overflow for large |x|
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


# ----------------------------------------------------------------------------
# layers


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (N, in) @ w.T (out, in) + b."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} vs weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeMismatch(f"linear: bias {b.shape} vs {w.shape[0]} outputs")
        out = out + b.data

    def back(g):
        gx = g @ w.data
        gw = g.T @ x.data
        gb = g.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, back)


def _conv_out(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (N, C, H, W) with w (O, C, kh, kw) via im2col."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    N, C, H, W = x.shape
    O, C2, kh, kw = w.shape
    if C != C2:
        raise ShapeMismatch(f"conv2d: input has {C} channels, weight expects {C2}")
    s, p = stride, padding
    OH, OW = _conv_out(H, kh, s, p), _conv_out(W, kw, s, p)
    if OH < 1 or OW < 1:
        raise ShapeMismatch(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, : s * (OH - 1) + 1 : s, : s * (OW - 1) + 1 : s]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * OH * OW, C * kh * kw)
    wmat = w.data.reshape(O, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(N, OH, OW, O).transpose(0, 3, 1, 2))

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (gm.T @ cols).reshape(w.shape)
        gx = None
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(N, OH, OW, C, kh, kw)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + s * (OH - 1) + 1 : s, j : j + s * (OW - 1) + 1 : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        if b is not None:
            return gx, gw, gm.sum(axis=0)
        return gx, gw

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, back)


def avgpool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling (trailing rows/cols that do not fill a window are dropped)."""
    N, C, H, W = x.shape
    OH, OW = H // k, W // k
    if OH < 1 or OW < 1:
        raise ShapeMismatch(f"avgpool2d: window {k} larger than input {H}x{W}")
    crop = x.data[:, :, : OH * k, : OW * k]
    out = crop.reshape(N, C, OH, k, OW, k).mean(axis=(3, 5))

    def back(g):
        gx = np.zeros_like(x.data)
        gx[:, :, : OH * k, : OW * k] = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx,)

    return _make(out, (x,), back)


def global_avgpool(x: Tensor) -> Tensor:
    N, C, H, W = x.shape
    out = x.data.mean(axis=(2, 3))
    return _make(out, (x,), lambda g: (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),))


def group_norm(x: Tensor, groups: int, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    N, C, H, W = x.shape
    if C % groups:
        raise ShapeMismatch(f"group_norm: {C} channels not divisible into {groups} groups")
    xg = x.data.reshape(N, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(N, C, H, W)
    out = xhat
    if gamma is not None:
        out = xhat * gamma.data.reshape(1, C, 1, 1) + beta.data.reshape(1, C, 1, 1)

    def back(g):
        gxhat = g * gamma.data.reshape(1, C, 1, 1) if gamma is not None else g
        gh = gxhat.reshape(N, groups, -1)
        xh = xhat.reshape(N, groups, -1)
        gx = inv * (gh - gh.mean(axis=2, keepdims=True) - xh * (gh * xh).mean(axis=2, keepdims=True))
        gx = gx.reshape(x.shape)
        if gamma is None:
            return (gx,)
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    parents = (x, gamma, beta) if gamma is not None else (x,)
    return _make(out.astype(x.dtype, copy=False), parents, back)


# ----------------------------------------------------------------------------
# losses


def mse_loss(pred: Tensor, target) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ShapeMismatch(f"mse_loss: {pred.shape} vs {t.shape}")
    d = pred.data - t
    n = d.size
    return _make(np.asarray((d * d).mean(), dtype=pred.dtype), (pred,), lambda g: (g * 2.0 * d / n,))


BCE_EPS = 1e-7


def bce_loss(prob: Tensor, label) -> Tensor:
    """Mean binary cross entropy of probabilities clamped to [1e-7, 1 - 1e-7]."""
    y = label.data if isinstance(label, Tensor) else np.asarray(label, dtype=prob.dtype)
    if y.shape != prob.shape:
        raise ShapeMismatch(f"bce_loss: {prob.shape} vs {y.shape}")
    p = np.clip(prob.data, BCE_EPS, 1 - BCE_EPS)
    inside = (prob.data > BCE_EPS) & (prob.data < 1 - BCE_EPS)
    n = p.size
    loss = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
    return _make(np.asarray(loss, dtype=prob.dtype), (prob,), lambda g: (g * inside * (p - y) / (p * (1 - p)) / n,))
