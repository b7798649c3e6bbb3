"""Reverse-mode autodiff tensor core.

Values are dense float64 numpy arrays wrapped in :class:`Tensor` nodes that
record their parents and a backward closure. Feature maps follow the
``(N, C, H, W)`` layout; token matrices are 2-D ``(T, d)`` or batched 3-D
``(B, T, d)``. Every op is a pure function of its inputs, raises
:class:`NumericError` on non-finite values instead of propagating them, and
carries an analytic gradient that is validated against central differences
(see :mod:`ffrt.gradcheck`).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, NumericError, ParameterError

_GELU_A = math.sqrt(2.0 / math.pi)
_GELU_B = 0.044715


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite values in tensor data")
    return arr


class Tensor:
    """A float64 array plus an optional gradient tape node.

    ``requires_grad`` marks leaves (parameters, probed inputs); interior
    nodes inherit it from their parents. ``backward()`` may only be called
    on scalars and accumulates ``.grad`` on every reachable leaf.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                # leaf
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul_scalar(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    def __rmul__(self, other):
        return mul_scalar(self, float(other))

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("tensor/tensor division not supported; use reciprocal inputs")
        return mul_scalar(self, 1.0 / float(other))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _node(data, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (),
                  _backward=backward if needs else None)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data + c, (a,), lambda g: ((a, g),))
    out = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _node(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return ((a, _unbroadcast(g * bd, ad.shape)), (b, _unbroadcast(g * ad, bd.shape)))

    return _node(out, (a, b), backward)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: ((a, g * c),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return ((x, g * mask),)

    return _node(np.where(mask, x.data, 0.0), (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU (the SegFormer-style FFN activation)."""
    xd = x.data
    u = _GELU_A * (xd + _GELU_B * xd ** 3)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        du = _GELU_A * (1.0 + 3.0 * _GELU_B * xd ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t ** 2) * du
        return ((x, g * local),)

    return _node(out, (x,), backward)


def abs_(x: Tensor) -> Tensor:
    s = np.sign(x.data)

    def backward(g):
        return ((x, g * s),)

    return _node(np.abs(x.data), (x,), backward)


# -- reductions ---------------------------------------------------------------


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def backward(g):
        if axis is None:
            return ((x, np.broadcast_to(g, shape).copy()),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return ((x, np.broadcast_to(gg, shape).copy()),)

    return _node(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        count = x.data.shape[axis]
    return mul_scalar(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -- shape manipulation -------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.data.shape

    def backward(g):
        return ((x, g.reshape(orig)),)

    return _node(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return ((x, g.transpose(inv)),)

    return _node(x.data.transpose(axes), (x,), backward)


def concat(parts: list[Tensor], axis: int) -> Tensor:
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        outs = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            outs.append((p, g[tuple(idx)]))
        return tuple(outs)

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape = x.data.shape

    def backward(g):
        full = np.zeros(shape)
        full[idx] = g
        return ((x, full),)

    return _node(x.data[idx], (x,), backward)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return ((a, ga), (b, gb))

    return _node(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Token-space affine map: ``x @ weight.T + bias``.

    `weight` is ``(out_dim, in_dim)``, matching the stored parameter layout.
    """
    y = matmul(x, transpose(weight, (1, 0)))
    if bias is not None:
        y = add(y, bias)
    return y


# -- softmax / normalization ---------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((x, (g - dot) * out),)

    return _node(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def backward(g):
        return ((x, g - sm * g.sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Channelwise normalization per spatial position (axis 1 of NCHW)."""
    if eps <= 0:
        raise ParameterError("layer_norm eps must be > 0")
    if x.data.ndim < 2:
        raise DimensionError("layer_norm expects at least 2 dims with channels at axis 1")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError("gamma/beta must be length-C vectors")
    bshape = (1, c) + (1,) * (x.data.ndim - 2)
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        gs = g * gamma.data.reshape(bshape)
        m1 = gs.mean(axis=1, keepdims=True)
        m2 = (gs * xhat).mean(axis=1, keepdims=True)
        dx = inv * (gs - m1 - xhat * m2)
        axes = (0,) + tuple(range(2, x.data.ndim))
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        return ((x, dx), (gamma, dgamma), (beta, dbeta))

    return _node(out, (x, gamma, beta), backward)


# -- attention -----------------------------------------------------------------


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention ``softmax(q kᵀ / sqrt(dk)) v``.

    Accepts 2-D ``(T, d)`` or batched 3-D ``(B, T, d)`` operands; query and
    key/value token counts may differ (cross-resolution use).
    """
    if q.data.shape[-1] != k.data.shape[-1]:
        raise DimensionError("query/key widths differ")
    if k.data.shape[-2] != v.data.shape[-2]:
        raise DimensionError("key/value token counts differ")
    dk = q.data.shape[-1]
    logits = mul_scalar(matmul(q, transpose_last(k)), 1.0 / math.sqrt(dk))
    return matmul(softmax(logits, axis=-1), v)


def transpose_last(x: Tensor) -> Tensor:
    axes = list(range(x.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


# -- convolution ---------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           pad: int = 0, groups: int = 1) -> Tensor:
    """Direct 2-D cross-correlation over NCHW with zero padding.

    Output spatial size is ``floor((H + 2 pad - kh) / stride) + 1``.
    """
    if stride < 1 or pad < 0:
        raise ParameterError("conv2d: stride must be >= 1 and pad >= 0")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and kernel")
    n, cin, h, wd = x.data.shape
    cout, cin_g, kh, kw = w.data.shape
    if cin % groups or cout % groups or cin // groups != cin_g:
        raise DimensionError(
            f"conv2d channel/group mismatch: Cin={cin}, Cout={cout}, groups={groups}, kernel Cin/g={cin_g}")
    if kh < 1 or kw < 1:
        raise DimensionError("conv2d kernel must be at least 1x1")
    hout = (h + 2 * pad - kh) // stride + 1
    wout = (wd + 2 * pad - kw) // stride + 1
    if hout < 1 or wout < 1:
        raise DimensionError("conv2d output would be empty")
    if b is not None and b.data.shape != (cout,):
        raise DimensionError("conv2d bias must have Cout entries")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.empty((n, cin, kh, kw, hout, wout))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * hout:stride, j:j + stride * wout:stride]
    # (N, g, Cin/g*kh*kw, L) @ (g, Cout/g, Cin/g*kh*kw)^T
    cols_m = cols.reshape(n, groups, cin_g * kh * kw, hout * wout)
    w_m = w.data.reshape(groups, cout // groups, cin_g * kh * kw)
    out = np.matmul(w_m[None], cols_m).reshape(n, cout, hout, wout)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)

    def backward(g):
        gm = g.reshape(n, groups, cout // groups, hout * wout)
        dw = np.matmul(gm, cols_m.swapaxes(-1, -2)).sum(axis=0).reshape(w.data.shape)
        dcols = np.matmul(w_m.swapaxes(-1, -2)[None], gm)
        dcols = dcols.reshape(n, cin, kh, kw, hout, wout)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * hout:stride, j:j + stride * wout:stride] += dcols[:, :, i, j]
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
        grads = [(x, dx), (w, dw)]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 2, 3))))
        return tuple(grads)

    return _node(out, (x, w) + ((b,) if b is not None else ()), backward)


# -- resampling / pooling ------------------------------------------------------


def _resize_axis_weights(n_in: int, n_out: int):
    # align_corners=False sample positions
    s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, n_in - 1.0)
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = s - i0
    return i0, i1, 1.0 - w1, w1


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling, align-corners-false. Same-size resize is identity."""
    if out_h < 1 or out_w < 1:
        raise ParameterError("bilinear_resize target dims must be >= 1")
    if x.data.ndim != 4:
        raise DimensionError("bilinear_resize expects NCHW")
    n, c, h, w = x.data.shape
    ri0, ri1, rw0, rw1 = _resize_axis_weights(h, out_h)
    ci0, ci1, cw0, cw1 = _resize_axis_weights(w, out_w)
    rows = x.data[:, :, ri0] * rw0[None, None, :, None] + x.data[:, :, ri1] * rw1[None, None, :, None]
    out = rows[:, :, :, ci0] * cw0 + rows[:, :, :, ci1] * cw1

    def backward(g):
        drows = np.zeros((n, c, out_h, w))
        np.add.at(drows, (slice(None), slice(None), slice(None), ci0), g * cw0)
        np.add.at(drows, (slice(None), slice(None), slice(None), ci1), g * cw1)
        dx = np.zeros((n, c, h, w))
        np.add.at(dx, (slice(None), slice(None), ri0), drows * rw0[None, None, :, None])
        np.add.at(dx, (slice(None), slice(None), ri1), drows * rw1[None, None, :, None])
        return ((x, dx),)

    return _node(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over spatial positions, keeping (N, C, 1, 1)."""
    if x.data.ndim != 4:
        raise DimensionError("global_avg_pool expects NCHW")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        return ((x, np.broadcast_to(g / (h * w), x.data.shape).copy()),)

    return _node(out, (x,), backward)


def pad_spatial(x: Tensor, pad_h: int, pad_w: int, mode: str = "reflect") -> Tensor:
    """Pad bottom/right of an NCHW tensor (reflect or zero)."""
    if pad_h == 0 and pad_w == 0:
        return x
    n, c, h, w = x.data.shape
    if mode == "reflect":
        if pad_h > h - 1 or pad_w > w - 1:
            raise DimensionError("reflect padding exceeds input size")
        idx_h = np.concatenate([np.arange(h), h - 2 - np.arange(pad_h)])
        idx_w = np.concatenate([np.arange(w), w - 2 - np.arange(pad_w)])
    elif mode == "zero":
        idx_h = idx_w = None
    else:
        raise ParameterError(f"unknown padding mode {mode!r}")

    if mode == "zero":
        out = np.pad(x.data, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)))

        def backward(g):
            return ((x, g[:, :, :h, :w]),)
    else:
        out = x.data[:, :, idx_h[:, None], idx_w[None, :]]

        def backward(g):
            dx = np.zeros_like(x.data)
            np.add.at(dx, (slice(None), slice(None), idx_h[:, None], idx_w[None, :]), g)
            return ((x, dx),)

    return _node(out, (x,), backward)


def crop_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left h x w window of an NCHW tensor."""
    return narrow(narrow(x, 2, 0, h), 3, 0, w)
