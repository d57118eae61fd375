"""Differentiable operations over Tensors.

The op set is exactly what the network and losses need: elementwise
arithmetic with broadcasting, log/clamp with a guarded epsilon floor,
relu/tanh/softmax, reductions, masked selection, dense affine, 3D
convolution (strided for downsampling), and nearest-neighbor upsampling.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import NumericsError, ShapeError
from .tensor import Tensor, as_tensor, epsilon, make_node


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _binary_shapes(a, b, op_name):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{op_name}: incompatible shapes {a.data.shape} and {b.data.shape}"
        ) from None


def add(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _binary_shapes(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return make_node(out_data, (a, b), backward, name="add")


def sub(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _binary_shapes(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return make_node(out_data, (a, b), backward, name="sub")


def mul(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _binary_shapes(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return make_node(out_data, (a, b), backward, name="mul")


def div(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _binary_shapes(a, b, "div")
    if np.any(np.abs(b.data) < epsilon()):
        raise NumericsError(
            f"div: denominator below epsilon floor {epsilon():g}; clamp first"
        )
    out_data = a.data / b.data

    def backward(g):
        a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        b.accumulate_grad(_unbroadcast(-g * out_data / b.data, b.data.shape))

    return make_node(out_data, (a, b), backward, name="div")


def neg(a):
    out_data = -a.data

    def backward(g):
        a.accumulate_grad(-g)

    return make_node(out_data, (a,), backward, name="neg")


def log(a):
    if np.any(a.data < epsilon()):
        raise NumericsError(
            f"log: input below epsilon floor {epsilon():g}; clamp first"
        )
    out_data = np.log(a.data)

    def backward(g):
        a.accumulate_grad(g / a.data)

    return make_node(out_data, (a,), backward, name="log")


def clamp(a, min_value=None, max_value=None):
    if min_value is None and max_value is None:
        raise ValueError("clamp: need min_value and/or max_value")
    out_data = np.clip(a.data, min_value, max_value)
    inside = np.ones(a.data.shape, dtype=bool)
    if min_value is not None:
        inside &= a.data >= min_value
    if max_value is not None:
        inside &= a.data <= max_value

    def backward(g):
        a.accumulate_grad(g * inside)

    return make_node(out_data, (a,), backward, name="clamp")


def relu(a):
    out_data = np.maximum(a.data, 0)
    active = a.data > 0

    def backward(g):
        a.accumulate_grad(g * active)

    return make_node(out_data, (a,), backward, name="relu")


def tanh(a):
    out_data = np.tanh(a.data)

    def backward(g):
        a.accumulate_grad(g * (1.0 - out_data * out_data))

    return make_node(out_data, (a,), backward, name="tanh")


def softmax(a, axis=0):
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a.accumulate_grad(out_data * (g - dot))

    return make_node(out_data, (a,), backward, name="softmax")


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tensor_sum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.data.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g
        if not keepdims:
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        a.accumulate_grad(np.broadcast_to(gg, a.data.shape).astype(a.data.dtype))

    return make_node(out_data, (a,), backward, name="sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    if count == 0:
        raise NumericsError("mean over zero elements")
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g
        if not keepdims:
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        a.accumulate_grad(
            (np.broadcast_to(gg, a.data.shape) / count).astype(a.data.dtype)
        )

    return make_node(out_data, (a,), backward, name="mean")


def masked_select(a, mask):
    """Gather voxels where mask is set.

    mask matches the trailing spatial shape: (X,Y,Z) input -> (n,) output,
    (C,X,Y,Z) input -> (C,n) output.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape == a.data.shape:
        channelwise = False
    elif mask.shape == a.data.shape[1:]:
        channelwise = True
    else:
        raise ShapeError(
            f"masked_select: mask shape {mask.shape} vs value shape {a.data.shape}"
        )
    out_data = a.data[:, mask] if channelwise else a.data[mask]

    def backward(g):
        full = np.zeros(a.data.shape, dtype=a.data.dtype)
        if channelwise:
            full[:, mask] = g
        else:
            full[mask] = g
        a.accumulate_grad(full)

    return make_node(out_data, (a,), backward, name="masked_select")


def affine(x, w, b):
    """Dense layer: x @ w + b with x of shape (n,) or (m, n)."""
    if x.data.ndim not in (1, 2) or w.data.ndim != 2:
        raise ShapeError(f"affine: x shape {x.data.shape}, w shape {w.data.shape}")
    if x.data.shape[-1] != w.data.shape[0] or b.data.shape != (w.data.shape[1],):
        raise ShapeError(
            f"affine: got x {x.data.shape}, w {w.data.shape}, b {b.data.shape}"
        )
    out_data = x.data @ w.data + b.data

    def backward(g):
        x.accumulate_grad(g @ w.data.T)
        if x.data.ndim == 1:
            w.accumulate_grad(np.outer(x.data, g))
            b.accumulate_grad(g)
        else:
            w.accumulate_grad(x.data.T @ g)
            b.accumulate_grad(g.sum(axis=0))

    return make_node(out_data, (x, w, b), backward, name="affine")


def conv3d(x, w, b, stride=1):
    """3D convolution over (C,X,Y,Z) with zero padding preserving extent.

    Kernels must be cubic with odd size; stride 2 halves even extents.
    """
    if x.data.ndim != 4 or w.data.ndim != 5:
        raise ShapeError(f"conv3d: x shape {x.data.shape}, w shape {w.data.shape}")
    k = w.data.shape[2]
    if w.data.shape[3] != k or w.data.shape[4] != k or k % 2 == 0:
        raise ShapeError(f"conv3d: kernel must be cubic odd, got {w.data.shape[2:]}")
    if x.data.shape[0] != w.data.shape[1]:
        raise ShapeError(
            f"conv3d: input channels {x.data.shape} vs kernel {w.data.shape}"
        )
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"conv3d: bias shape {b.data.shape} vs {w.data.shape[0]} channels")
    pad = k // 2
    out_data = kernels.conv3d_forward(x.data, w.data, b.data, stride, pad)

    def backward(g):
        g = np.ascontiguousarray(g)
        x.accumulate_grad(kernels.conv3d_input_grad(g, w.data, x.data.shape, stride, pad))
        w.accumulate_grad(kernels.conv3d_weight_grad(g, x.data, w.data.shape, stride, pad))
        b.accumulate_grad(g.sum(axis=(1, 2, 3)))

    return make_node(out_data, (x, w, b), backward, name="conv3d")


def upsample_nearest(a, factor=2):
    if a.data.ndim != 4:
        raise ShapeError(f"upsample_nearest: expected (C,X,Y,Z), got {a.data.shape}")
    out_data = a.data.repeat(factor, axis=1).repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(g):
        c, x_n, y_n, z_n = a.data.shape
        gg = g.reshape(c, x_n, factor, y_n, factor, z_n, factor).sum(axis=(2, 4, 6))
        a.accumulate_grad(gg.astype(a.data.dtype))

    return make_node(out_data, (a,), backward, name="upsample_nearest")
