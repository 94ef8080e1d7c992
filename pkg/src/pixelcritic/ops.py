"""Differentiable operations on :class:`~pixelcritic.autograd.Tensor`.

Layout convention for images inside the network is ``[B, C, H, W]``.
``conv2d`` is a cross-correlation (no kernel flip) with zero padding.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .autograd import ContractError, DimensionError, Tensor, as_tensor

__all__ = [
    "add",
    "sub",
    "mul",
    "matmul",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "relu",
    "sigmoid",
    "softmax",
    "log",
    "conv2d",
    "pool2d_avg",
    "upsample_nearest",
]

# Largest float64 strictly below 1; keeps sigmoid outputs inside (0, 1).
_ONE_MINUS = np.nextafter(1.0, 0.0)
_TINY = np.finfo(np.float64).tiny


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not conformable") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), _backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), _backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def _backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), _backward, "mul")


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")

    def _backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), _backward, "matmul")


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def _backward(g):
        if axis is not None and not keepdims:
            kept = list(x.shape)
            for a in np.atleast_1d(axis):
                kept[a] = 1
            g = np.reshape(g, kept)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(out, (x,), _backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    def _backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(out, (x,), _backward, "reshape")


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        return (np.transpose(g, inverse),)

    return Tensor._from_op(np.transpose(x.data, axes), (x,), _backward, "transpose")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return Tensor._from_op(out, tuple(tensors), _backward, "concat")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def _backward(g):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), _backward, "relu")


def sigmoid(x) -> Tensor:
    """Logistic function, clipped so that outputs stay strictly inside (0, 1)."""
    x = as_tensor(x)
    s = np.clip(expit(x.data), _TINY, _ONE_MINUS)

    def _backward(g):
        return (g * s * (1.0 - s),)

    return Tensor._from_op(s, (x,), _backward, "sigmoid")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (x,), _backward, "softmax")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise ContractError("log of a non-positive value")

    def _backward(g):
        return (g / x.data,)

    return Tensor._from_op(np.log(x.data), (x,), _backward, "log")


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x[B, C, H, W]`` with ``kernel[O, C, kH, kW]``.

    Implemented as an im2col matrix product. ``bias`` (shape ``[O]``) is
    optional and added per output channel.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"conv2d: input {x.shape} and kernel {kernel.shape} are not conformable"
        )
    B, C, H, W = x.shape
    O, _, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractError(f"conv2d: kernel size must be odd, got {kh}x{kw}")
    if padding < 0 or stride < 1:
        raise ContractError(f"conv2d: invalid padding={padding} or stride={stride}")
    span_h, span_w = H + 2 * padding - kh, W + 2 * padding - kw
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise DimensionError(
            f"conv2d: input {x.shape} and kernel {kernel.shape} give a non-integral "
            f"output size at stride {stride}, padding {padding}"
        )
    Ho, Wo = span_h // stride + 1, span_w // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = kernel.data.reshape(O, -1)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (O,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {O} outputs")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def _backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gk = (gmat.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad and stride == 1 and padding <= min(kh, kw) - 1:
            # stride 1: input gradient is a full correlation with the flipped kernel
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1 - padding,) * 2, (kw - 1 - padding,) * 2))
            gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            gcol = gwin.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, O * kh * kw)
            wflip = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(C, -1)
            gx = (gcol @ wflip.T).reshape(B, H, W, C).transpose(0, 3, 1, 2)
        elif x.requires_grad:
            gcols = (gmat @ wmat).reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[
                        ..., i, j
                    ]
            gx = gxp[:, :, padding : padding + H, padding : padding + W]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor._from_op(out, tuple(parents), _backward, "conv2d")


def pool2d_avg(x, factor: int = 2) -> Tensor:
    """Average over non-overlapping ``factor x factor`` windows."""
    x = as_tensor(x)
    if factor < 1:
        raise ContractError(f"pool factor must be >= 1, got {factor}")
    *lead, H, W = x.shape
    if H % factor or W % factor:
        raise DimensionError(f"pool2d_avg: spatial size {H}x{W} not divisible by {factor}")
    shaped = x.data.reshape(*lead, H // factor, factor, W // factor, factor)
    out = shaped.mean(axis=(-3, -1))
    scale = 1.0 / (factor * factor)

    def _backward(g):
        up = np.repeat(np.repeat(g, factor, axis=-2), factor, axis=-1)
        return (up * scale,)

    return Tensor._from_op(out, (x,), _backward, "pool2d_avg")


def upsample_nearest(x, factor: int = 2) -> Tensor:
    """Replicate each pixel into a ``factor x factor`` block."""
    x = as_tensor(x)
    if factor < 1:
        raise ContractError(f"upsample factor must be >= 1, got {factor}")
    *lead, H, W = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)

    def _backward(g):
        return (g.reshape(*lead, H, factor, W, factor).sum(axis=(-3, -1)),)

    return Tensor._from_op(out, (x,), _backward, "upsample_nearest")
