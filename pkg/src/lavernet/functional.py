"""Differentiable kernels over :class:`~lavernet.tensor.Tensor`.

Spatial ops accept ``C x H x W`` maps or ``N x C x H x W`` batches; the
channel axis is always ``-3``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, Tensor

__all__ = [
    "add", "sub", "mul", "sum", "mean", "sqrt", "sigmoid", "leaky_relu",
    "conv2d", "layer_norm_channels", "softmax_lastdim", "pixel_shuffle",
    "pixel_unshuffle", "matmul_batched", "transpose_last2", "reshape",
    "concat_channels", "select", "stack",
]


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_broadcast(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return Tensor._from_op(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward, "mean")


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)

    def backward(g):
        return (g * 0.5 / y,)

    return Tensor._from_op(y, (x,), backward, "sqrt")


def _sigmoid_backward(g: np.ndarray, y: np.ndarray) -> np.ndarray:
    return g * y * (1.0 - y)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    z = x.data
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)

    def backward(g):
        return (_sigmoid_backward(g, y),)

    return Tensor._from_op(y, (x,), backward, "sigmoid")


def _leaky_relu_backward(g: np.ndarray, positive: np.ndarray, slope: float) -> np.ndarray:
    return np.where(positive, g, g * slope)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    positive = x.data > 0
    y = np.where(positive, x.data, x.data * slope)

    def backward(g):
        return (_leaky_relu_backward(g, positive, slope),)

    return Tensor._from_op(y, (x,), backward, "leaky_relu")


# -- convolution --------------------------------------------------------------

def _columns(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (C*k*k, N*H*W) patch matrix with zero 'same' padding."""
    n, c, h, w = x.shape
    if k == 1:
        return x.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N C H W k k
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * h * w)


def _conv_forward(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, _, h, wd = x.shape
    cout, _, k, _ = w.shape
    cols = _columns(x, k)
    out = w.reshape(cout, -1) @ cols
    return out.reshape(cout, n, h, wd).transpose(1, 0, 2, 3), cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero 'same' padding."""
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d expects CxHxW or NxCxHxW input, got {x.shape}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be Cout x Cin x k x k, got {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d kernel must be square and odd, got {kh}x{kw}")
    if x.shape[-3] != cin:
        raise DimensionError(f"conv2d: input has {x.shape[-3]} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    batched = x.ndim == 4
    xb = x.data if batched else x.data[None]
    out, cols = _conv_forward(xb, weight.data)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    if not batched:
        out = out[0]
    out = np.ascontiguousarray(out)

    def backward(g):
        gb4 = g if batched else g[None]
        gmat = gb4.transpose(1, 0, 2, 3).reshape(cout, -1)
        gx = gw = gbias = None
        if x.requires_grad:
            flipped = np.ascontiguousarray(weight.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            gx, _ = _conv_forward(np.ascontiguousarray(gb4), flipped)
            gx = gx if batched else gx[0]
        if weight.requires_grad:
            gw = (gmat @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gbias = gmat.sum(axis=1)
        return gx, gw, gbias

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv2d")


# -- normalization / attention ------------------------------------------------

def layer_norm_channels(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize across channels at every spatial location, then scale and shift."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    c = x.shape[-3]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm_channels: affine shapes {gamma.shape}/{beta.shape} vs {c} channels")
    mu = x.data.mean(axis=-3, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-3, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g3 = gamma.data.reshape(c, 1, 1)
    y = xhat * g3 + beta.data.reshape(c, 1, 1)
    reduce_axes = tuple(i for i in range(x.ndim) if i != x.ndim - 3)

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * g3
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-3, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-3, keepdims=True)
            )
        ggamma = (g * xhat).sum(axis=reduce_axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=reduce_axes) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return Tensor._from_op(y, (x, gamma, beta), backward, "layer_norm")


def _softmax_backward(g: np.ndarray, y: np.ndarray) -> np.ndarray:
    return y * (g - (g * y).sum(axis=-1, keepdims=True))


def softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (_softmax_backward(g, y),)

    return Tensor._from_op(y, (x,), backward, "softmax")


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimension mismatch: {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


def transpose_last2(x: Tensor) -> Tensor:
    def backward(g):
        return (np.ascontiguousarray(np.swapaxes(g, -1, -2)),)

    return Tensor._from_op(np.ascontiguousarray(np.swapaxes(x.data, -1, -2)), (x,), backward, "transpose")


# -- layout -------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(y, (x,), backward, "reshape")


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Fold each r x r spatial block into channels, block offsets in row-major order."""
    h, w = x.shape[-2:]
    if h % r or w % r:
        raise DimensionError(f"pixel_unshuffle: {h}x{w} not divisible by {r}")
    if r == 1:
        return x

    def backward(g):
        return (_shuffle(g, r),)

    return Tensor._from_op(_unshuffle(x.data, r), (x,), backward, "pixel_unshuffle")


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    *lead, cr, h, w = a.shape
    lead = tuple(lead)
    nl = len(lead)
    c = cr // (r * r)
    perm = tuple(range(nl)) + tuple(nl + i for i in (0, 3, 1, 4, 2))
    y = a.reshape(lead + (c, r, r, h, w)).transpose(perm)
    return np.ascontiguousarray(y).reshape(lead + (c, h * r, w * r))


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    *lead, c, h, w = a.shape
    lead = tuple(lead)
    nl = len(lead)
    perm = tuple(range(nl)) + tuple(nl + i for i in (0, 2, 4, 1, 3))
    y = a.reshape(lead + (c, h // r, r, w // r, r)).transpose(perm)
    return np.ascontiguousarray(y).reshape(lead + (c * r * r, h // r, w // r))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_unshuffle`."""
    cr = x.shape[-3]
    if cr % (r * r):
        raise DimensionError(f"pixel_shuffle: {cr} channels not divisible by {r * r}")
    if r == 1:
        return x

    def backward(g):
        return (_unshuffle(g, r),)

    return Tensor._from_op(_shuffle(x.data, r), (x,), backward, "pixel_shuffle")


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise DimensionError("concat_channels of an empty list")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or t.shape[:-3] != ref[:-3] or t.shape[-2:] != ref[-2:]:
            raise DimensionError(f"concat_channels: incompatible shapes {ref} and {t.shape}")
    splits = np.cumsum([t.shape[-3] for t in xs])[:-1]

    def backward(g):
        return [np.ascontiguousarray(p) for p in np.split(g, splits, axis=-3)]

    return Tensor._from_op(np.concatenate([t.data for t in xs], axis=-3), tuple(xs), backward, "concat")


def select(x: Tensor, index: int) -> Tensor:
    """Index along the leading axis."""
    n = x.shape[0]
    if not -n <= index < n:
        raise IndexError(f"index {index} out of range for leading extent {n}")

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return Tensor._from_op(x.data[index].copy(), (x,), backward, "select")


def stack(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise DimensionError("stack of an empty list")
    shape = xs[0].shape
    if any(t.shape != shape for t in xs):
        raise DimensionError("stack: all tensors must share one shape")

    def backward(g):
        return [g[i] for i in range(len(xs))]

    return Tensor._from_op(np.stack([t.data for t in xs]), tuple(xs), backward, "stack")

