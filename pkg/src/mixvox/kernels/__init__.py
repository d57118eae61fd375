"""Hot numeric kernels with selectable backend.

The numba backend is used when available. Set MIXVOX_BACKEND=numpy to force
the pure-numpy fallback (useful for debugging and for the comparison
benchmark under benchmarks/), or MIXVOX_BACKEND=numba to fail hard when
numba cannot be imported.

The convolution input-gradient is backend-independent algebra: zero-dilate
the output gradient for strided convs, pad, and run the backend's forward
kernel with the spatially flipped, channel-transposed weights.
"""

import os

import numpy as np

from ..errors import ConfigError

_choice = os.environ.get("MIXVOX_BACKEND", "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ConfigError(f"MIXVOX_BACKEND must be auto|numba|numpy, got {_choice!r}")

if _choice == "numpy":
    from . import _numpy as _impl
else:
    try:
        from . import _numba as _impl
    except ImportError as exc:
        if _choice == "numba":
            raise ConfigError(f"MIXVOX_BACKEND=numba but numba is unavailable: {exc}") from exc
        from . import _numpy as _impl

conv3d_forward = _impl.conv3d_forward
conv3d_weight_grad = _impl.conv3d_weight_grad
crc32c = _impl.crc32c


def conv3d_input_grad(dy, w, x_shape, stride, pad):
    k = w.shape[2]
    if stride > 1:
        dilated = np.zeros(
            (dy.shape[0],) + tuple((o - 1) * stride + 1 for o in dy.shape[1:]),
            dtype=dy.dtype,
        )
        dilated[:, ::stride, ::stride, ::stride] = dy
        dy = dilated
    # Right pad absorbs voxels a strided forward never reached.
    pads = [(0, 0)]
    for i in range(3):
        extra = (x_shape[1 + i] + 2 * pad - k) % stride
        pads.append((k - 1 - pad, k - 1 - pad + extra))
    if any(p != (0, 0) for p in pads):
        dy = np.pad(dy, pads)
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
    zero_bias = np.zeros(w_t.shape[0], dtype=dy.dtype)
    return _impl.conv3d_forward(np.ascontiguousarray(dy), w_t, zero_bias, 1, 0)


def backend_name() -> str:
    return _impl.BACKEND_NAME


__all__ = [
    "conv3d_forward",
    "conv3d_weight_grad",
    "conv3d_input_grad",
    "crc32c",
    "backend_name",
]
