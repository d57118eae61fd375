"""Pure-numpy kernel implementations.

Convolutions go through sliding-window views and tensordot so the heavy
lifting lands in BLAS.
"""

import numpy as np

BACKEND_NAME = "numpy"


def _windows(x, kernel, stride, pad):
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=(1, 2, 3))
    return win[:, ::stride, ::stride, ::stride]


def conv3d_forward(x, w, b, stride, pad):
    win = _windows(x, w.shape[2:], stride, pad)
    out = np.tensordot(w, win, axes=([1, 2, 3, 4], [0, 4, 5, 6]))
    out += b[:, None, None, None]
    return np.ascontiguousarray(out.astype(x.dtype, copy=False))


def conv3d_weight_grad(dy, x, kernel_shape, stride, pad):
    win = _windows(x, kernel_shape[2:], stride, pad)
    dw = np.tensordot(dy, win, axes=([1, 2, 3], [1, 2, 3]))
    return np.ascontiguousarray(dw.astype(x.dtype, copy=False))


_CRC32C_POLY = 0x82F63B78


def _crc32c_table():
    table = np.zeros(256, dtype=np.uint32)
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ (_CRC32C_POLY if crc & 1 else 0)
        table[i] = crc
    return table


_CRC_TABLE = _crc32c_table()


def crc32c(data) -> int:
    buf = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    buf = np.ascontiguousarray(buf).view(np.uint8).reshape(-1)
    crc = 0xFFFFFFFF
    table = _CRC_TABLE
    # Chunked python loop; the numba backend is the fast path.
    data_bytes = buf.tobytes()
    for byte in data_bytes:
        crc = (crc >> 8) ^ int(table[(crc ^ byte) & 0xFF])
    return crc ^ 0xFFFFFFFF
