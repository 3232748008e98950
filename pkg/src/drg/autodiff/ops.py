"""Differentiable primitive operations.

Every op validates operand shapes, computes the forward value with numpy,
and registers a backward rule on the ambient tape. Layout convention for
images is NCHW; matmul is strictly 2-D (callers reshape).
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigurationError
from .tensor import Tensor, make_output

__all__ = [
    "as_tensor", "add", "sub", "neg", "mul", "div", "matmul", "transpose",
    "reshape", "relu", "tanh", "sigmoid", "softplus", "exp", "log", "sum_",
    "mean", "concat", "slice_", "conv2d", "transpose_conv2d",
    "softmax_cross_entropy", "stop_gradient",
]


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ConfigurationError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast("add", a, b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_output("add", out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast("sub", a, b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_output("sub", out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return make_output("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return make_output("mul", out, (a, b), bwd)


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bwd(g):
        ga = g / bd
        gb = -g * ad / (bd * bd)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_output("div", out, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(
            f"matmul: incompatible shapes {a.shape} @ {b.shape} (2-D, inner dims must match)")
    ad, bd = a.data, b.data
    out = ad @ bd

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return make_output("matmul", out, (a, b), bwd)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = np.ascontiguousarray(np.transpose(a.data, axes))

    def bwd(g):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return make_output("transpose", out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    in_shape = a.shape

    def bwd(g):
        return (g.reshape(in_shape),)

    return make_output("reshape", out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return make_output("relu", out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return make_output("tanh", out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return make_output("sigmoid", out, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    # log(1 + e^x) = max(x, 0) + log1p(e^-|x|), stable for large |x|
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * sig,)

    return make_output("softplus", out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return make_output("exp", out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    ad = a.data

    def bwd(g):
        return (g / ad,)

    return make_output("log", out, (a,), bwd)


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _normalize_axis(axis, a.ndim)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, in_shape).copy(),)

    return make_output("sum", np.asarray(out, dtype=a.data.dtype), (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _normalize_axis(axis, a.ndim)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    in_shape = a.shape
    if axis is None:
        count = a.size
    else:
        count = int(np.prod([in_shape[ax] for ax in axis]))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, in_shape) / count,)

    return make_output("mean", np.asarray(out, dtype=a.data.dtype), (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ConfigurationError("concat: need at least one tensor")
    axis = axis % tensors[0].ndim
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(tensors)))

    return make_output("concat", out, tensors, bwd)


def slice_(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing; each output element maps to a unique input."""
    out = a.data[key]
    in_shape = a.shape
    dtype = a.data.dtype

    def bwd(g):
        full = np.zeros(in_shape, dtype=dtype)
        full[key] = g
        return (full,)

    return make_output("slice", np.ascontiguousarray(out), (a,), bwd)


def stop_gradient(a: Tensor) -> Tensor:
    """Detach from the graph; shares the underlying array."""
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# Convolutions (NCHW, square stride/padding as ints, im2col based)
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Gather kernel windows of a padded input into (B, C, kh, kw, oh, ow)."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols


def _col2im(cols: np.ndarray, h: int, w: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add (B, C, kh, kw, oh, ow) windows back into (B, C, h, w)."""
    b, c, kh, kw, oh, ow = cols.shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad:pad + h, pad:pad + w]
    return xp


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (B,C,H,W) with w (OC,C,KH,KW)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ConfigurationError(
            f"conv2d: incompatible shapes x={x.shape}, w={w.shape}")
    b, c, h, wid = x.shape
    oc, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wid + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ConfigurationError(
            f"conv2d: kernel {w.shape} too large for input {x.shape} with padding {padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    # (B*OH*OW, C*KH*KW) @ (C*KH*KW, OC)
    mat = np.ascontiguousarray(cols.transpose(0, 4, 5, 1, 2, 3)).reshape(b * oh * ow, -1)
    wmat = w.data.reshape(oc, -1)
    out = (mat @ wmat.T).reshape(b, oh, ow, oc).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def bwd(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * oh * ow, oc)
        gw = (gmat.T @ mat).reshape(w.shape)
        gcols = (gmat @ wmat).reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gx = _col2im(np.ascontiguousarray(gcols), h, wid, stride, padding)
        return gx, gw

    return make_output("conv2d", out, (x, w), bwd)


def transpose_conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Transposed convolution of x (B,C,H,W) with w (C,OC,KH,KW).

    Output spatial size is (H-1)*stride - 2*padding + KH + output_padding.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ConfigurationError(
            f"transpose_conv2d: incompatible shapes x={x.shape}, w={w.shape}")
    b, c, h, wid = x.shape
    _, oc, kh, kw = w.shape
    oh = (h - 1) * stride - 2 * padding + kh + output_padding
    ow = (wid - 1) * stride - 2 * padding + kw + output_padding
    if oh < 1 or ow < 1:
        raise ConfigurationError(
            f"transpose_conv2d: degenerate output for x={x.shape}, w={w.shape}, "
            f"stride={stride}, padding={padding}")
    full_h = (h - 1) * stride + kh
    full_w = (wid - 1) * stride + kw
    xmat = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(b * h * wid, c)
    wmat = w.data.reshape(c, -1)
    colsmat = xmat @ wmat  # (B*H*W, OC*KH*KW)
    cols = colsmat.reshape(b, h, wid, oc, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    # scatter with an extended frame so output_padding rows/cols exist
    frame = np.zeros((b, oc, full_h + output_padding, full_w + output_padding), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            frame[:, :, i:i + stride * h:stride, j:j + stride * wid:stride] += cols[:, :, i, j]
    out = np.ascontiguousarray(frame[:, :, padding:padding + oh, padding:padding + ow])

    def bwd(g):
        gframe = np.zeros_like(frame)
        gframe[:, :, padding:padding + oh, padding:padding + ow] = g
        gcols = np.empty((b, oc, kh, kw, h, wid), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gcols[:, :, i, j] = gframe[:, :, i:i + stride * h:stride, j:j + stride * wid:stride]
        gcolsmat = np.ascontiguousarray(gcols.transpose(0, 4, 5, 1, 2, 3)).reshape(b * h * wid, -1)
        gx = (gcolsmat @ wmat.T).reshape(b, h, wid, c).transpose(0, 3, 1, 2)
        gw = (xmat.T @ gcolsmat).reshape(w.shape)
        return np.ascontiguousarray(gx), gw

    return make_output("transpose_conv2d", out, (x, w), bwd)


def softmax_cross_entropy(logits: Tensor, target_index) -> Tensor:
    """Per-row cross-entropy of softmax(logits) against integer labels.

    logits: (N, K); target_index: int array (N,). Returns per-row losses (N,).
    """
    if logits.ndim != 2:
        raise ConfigurationError(f"softmax_cross_entropy: logits must be 2-D, got {logits.shape}")
    tgt = np.asarray(target_index, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if tgt.shape[0] != n or tgt.min(initial=0) < 0 or tgt.max(initial=0) >= k:
        raise ConfigurationError(
            f"softmax_cross_entropy: targets {tgt.shape} invalid for logits {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(sez)
    out = -logp[np.arange(n), tgt]
    probs = ez / sez

    def bwd(g):
        d = probs.copy()
        d[np.arange(n), tgt] -= 1.0
        return (d * g[:, None],)

    return make_output("softmax_cross_entropy", out, (logits,), bwd)


# Operator sugar on Tensor ---------------------------------------------------

def _install_operators():
    Tensor.__add__ = lambda self, other: add(self, other)
    Tensor.__radd__ = lambda self, other: add(as_tensor(other, like=self), self)
    Tensor.__sub__ = lambda self, other: sub(self, other)
    Tensor.__rsub__ = lambda self, other: sub(as_tensor(other, like=self), self)
    Tensor.__mul__ = lambda self, other: mul(self, other)
    Tensor.__rmul__ = lambda self, other: mul(as_tensor(other, like=self), self)
    Tensor.__truediv__ = lambda self, other: div(self, other)
    Tensor.__neg__ = lambda self: neg(self)
    Tensor.__matmul__ = lambda self, other: matmul(self, other)
    Tensor.__getitem__ = lambda self, key: slice_(self, key)


_install_operators()
