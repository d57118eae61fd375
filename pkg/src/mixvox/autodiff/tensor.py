"""Reverse-mode autodiff over dense numpy arrays.

A Tensor wraps an ndarray plus an optional gradient accumulator. Every
operation that sees a grad-requiring input records its inputs and a local
backward closure on the output; backward() topologically sorts that
implicit graph from the root and runs the closures once each, accumulating
into .grad additively. Values are treated as immutable after creation.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericsError, ShapeError

_EPSILON = 1e-7
_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def epsilon() -> float:
    """Global floor used by all log/div guards."""
    return _EPSILON


def set_epsilon(value: float) -> None:
    global _EPSILON
    if value <= 0:
        raise ValueError("epsilon must be positive")
    _EPSILON = float(value)


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("default dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype.type


class no_grad:
    """Context manager that suppresses graph recording (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        # fast path: float ndarrays from internal ops pass through untouched
        if type(data) is np.ndarray and dtype is None and \
                data.dtype.num in (11, 12):  # float32, float64
            arr = data if data.flags["C_CONTIGUOUS"] else np.array(data, order="C")
        else:
            if isinstance(data, Tensor):
                raise TypeError("wrapping a Tensor in a Tensor; use .data")
            if dtype is None:
                arr = np.asarray(data)
                if arr.dtype not in (np.float32, np.float64):
                    arr = arr.astype(_DEFAULT_DTYPE)
            else:
                arr = np.asarray(data, dtype=dtype)
            if not arr.flags["C_CONTIGUOUS"]:
                # np.array keeps 0-d shape, unlike ascontiguousarray
                arr = np.array(arr, order="C")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self, context="") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericsError(f"non-finite values in {context or self.name or 'tensor'}")
        return self

    def accumulate_grad(self, g) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} vs value shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable grad-requiring leaf.

        Repeated calls without zero_grad add into the existing accumulators.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
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
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # Operator sugar; implementations live in ops.py to keep this file small.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    """Wrap plain values as constant tensors, matching dtype of `like`."""
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x), requires_grad=False, dtype=dtype)


def make_node(out_data, parents, backward_fn, name=None) -> Tensor:
    """Build an op output: graph edges are recorded only when some parent
    requires grad and grad mode is enabled."""
    out = Tensor(out_data, requires_grad=False, name=name)
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out
