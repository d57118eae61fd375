"""Numba-jitted kernel implementations.

Loops are ordered so the innermost axis is the contiguous z axis and every
output cell is owned by exactly one thread, which keeps results bitwise
reproducible regardless of thread count.
"""

import warnings

import numpy as np
from numba import njit, prange

# Harmless advisory about an outdated optional TBB threading layer; numba
# emits it at first parallel launch, so filter persistently.
warnings.filterwarnings("ignore", message=".*TBB.*")

BACKEND_NAME = "numba"


@njit(parallel=True, fastmath=True, cache=True)
def _conv3d_forward(x, w, b, stride, pad, out):
    co_n, ci_n, k1, k2, k3 = w.shape
    _, ox_n, oy_n, oz_n = out.shape
    _, ix_n, iy_n, iz_n = x.shape
    for coox in prange(co_n * ox_n):
        co = coox // ox_n
        ox = coox % ox_n
        for oy in range(oy_n):
            for oz in range(oz_n):
                out[co, ox, oy, oz] = b[co]
            for ci in range(ci_n):
                for kx in range(k1):
                    ix = ox * stride - pad + kx
                    if ix < 0 or ix >= ix_n:
                        continue
                    for ky in range(k2):
                        iy = oy * stride - pad + ky
                        if iy < 0 or iy >= iy_n:
                            continue
                        for kz in range(k3):
                            wv = w[co, ci, kx, ky, kz]
                            for oz in range(oz_n):
                                iz = oz * stride - pad + kz
                                if 0 <= iz < iz_n:
                                    out[co, ox, oy, oz] += x[ci, ix, iy, iz] * wv
    return out


@njit(fastmath=True, cache=True)
def _conv3d_forward_serial(x, w, b, stride, pad, out):
    # same loops without prange: the thread-pool launch costs more than the
    # arithmetic for small volumes
    co_n, ci_n, k1, k2, k3 = w.shape
    _, ox_n, oy_n, oz_n = out.shape
    _, ix_n, iy_n, iz_n = x.shape
    for co in range(co_n):
        for ox in range(ox_n):
            for oy in range(oy_n):
                for oz in range(oz_n):
                    out[co, ox, oy, oz] = b[co]
                for ci in range(ci_n):
                    for kx in range(k1):
                        ix = ox * stride - pad + kx
                        if ix < 0 or ix >= ix_n:
                            continue
                        for ky in range(k2):
                            iy = oy * stride - pad + ky
                            if iy < 0 or iy >= iy_n:
                                continue
                            for kz in range(k3):
                                wv = w[co, ci, kx, ky, kz]
                                for oz in range(oz_n):
                                    iz = oz * stride - pad + kz
                                    if 0 <= iz < iz_n:
                                        out[co, ox, oy, oz] += x[ci, ix, iy, iz] * wv
    return out


@njit(parallel=True, fastmath=True, cache=True)
def _conv3d_weight_grad(dy, x, stride, pad, dw):
    co_n, ci_n, k1, k2, k3 = dw.shape
    _, ox_n, oy_n, oz_n = dy.shape
    _, ix_n, iy_n, iz_n = x.shape
    for coci in prange(co_n * ci_n):
        co = coci // ci_n
        ci = coci % ci_n
        for kx in range(k1):
            for ky in range(k2):
                for kz in range(k3):
                    acc = 0.0
                    for ox in range(ox_n):
                        ix = ox * stride - pad + kx
                        if ix < 0 or ix >= ix_n:
                            continue
                        for oy in range(oy_n):
                            iy = oy * stride - pad + ky
                            if iy < 0 or iy >= iy_n:
                                continue
                            for oz in range(oz_n):
                                iz = oz * stride - pad + kz
                                if 0 <= iz < iz_n:
                                    acc += dy[co, ox, oy, oz] * x[ci, ix, iy, iz]
                    dw[co, ci, kx, ky, kz] = acc
    return dw


@njit(fastmath=True, cache=True)
def _conv3d_weight_grad_serial(dy, x, stride, pad, dw):
    co_n, ci_n, k1, k2, k3 = dw.shape
    _, ox_n, oy_n, oz_n = dy.shape
    _, ix_n, iy_n, iz_n = x.shape
    for co in range(co_n):
        for ci in range(ci_n):
            for kx in range(k1):
                for ky in range(k2):
                    for kz in range(k3):
                        acc = 0.0
                        for ox in range(ox_n):
                            ix = ox * stride - pad + kx
                            if ix < 0 or ix >= ix_n:
                                continue
                            for oy in range(oy_n):
                                iy = oy * stride - pad + ky
                                if iy < 0 or iy >= iy_n:
                                    continue
                                for oz in range(oz_n):
                                    iz = oz * stride - pad + kz
                                    if 0 <= iz < iz_n:
                                        acc += dy[co, ox, oy, oz] * x[ci, ix, iy, iz]
                        dw[co, ci, kx, ky, kz] = acc
    return dw


# Below this many multiply-adds the parallel launch overhead dominates.
_PARALLEL_MACS = 1_000_000


def conv3d_forward(x, w, b, stride, pad):
    out_spatial = tuple((n + 2 * pad - k) // stride + 1 for n, k in zip(x.shape[1:], w.shape[2:]))
    out = np.empty((w.shape[0],) + out_spatial, dtype=x.dtype)
    macs = w.size * out_spatial[0] * out_spatial[1] * out_spatial[2]
    if macs < _PARALLEL_MACS:
        return _conv3d_forward_serial(x, w, b, stride, pad, out)
    return _conv3d_forward(x, w, b, stride, pad, out)


def conv3d_weight_grad(dy, x, kernel_shape, stride, pad):
    dw = np.empty(kernel_shape, dtype=x.dtype)
    macs = int(np.prod(kernel_shape)) * dy.shape[1] * dy.shape[2] * dy.shape[3]
    if macs < _PARALLEL_MACS:
        return _conv3d_weight_grad_serial(dy, x, stride, pad, dw)
    return _conv3d_weight_grad(dy, x, stride, pad, dw)


_CRC32C_POLY = np.uint32(0x82F63B78)


@njit(cache=True)
def _crc_table():
    table = np.empty(256, dtype=np.uint32)
    for i in range(256):
        crc = np.uint32(i)
        for _ in range(8):
            if crc & np.uint32(1):
                crc = (crc >> np.uint32(1)) ^ _CRC32C_POLY
            else:
                crc = crc >> np.uint32(1)
        table[i] = crc
    return table


@njit(cache=True)
def _crc32c(buf, table):
    crc = np.uint32(0xFFFFFFFF)
    for i in range(buf.size):
        crc = (crc >> np.uint32(8)) ^ table[(crc ^ np.uint32(buf[i])) & np.uint32(0xFF)]
    return crc ^ np.uint32(0xFFFFFFFF)


_TABLE = _crc_table()


def crc32c(data) -> int:
    if isinstance(data, np.ndarray):
        buf = np.ascontiguousarray(data).view(np.uint8).reshape(-1)
    else:
        buf = np.frombuffer(bytes(data), dtype=np.uint8)
    return int(_crc32c(buf, _TABLE))
