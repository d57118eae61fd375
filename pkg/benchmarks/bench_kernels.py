"""Compare the numba and numpy kernel backends on training-shaped work.

Runs the conv3d forward/weight-grad/input-grad kernels and CRC32C on the
sizes the model actually uses, then a full forward+backward training batch
through each backend. Select a backend for the package at runtime with
MIXVOX_BACKEND=numba|numpy.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from mixvox.kernels import _numba, _numpy

CONV_CASES = [
    # (label, in_ch, out_ch, spatial, kernel, stride)
    ("stem 3->4 @32x32x16", 3, 4, (32, 32, 16), 3, 1),
    ("block 4->4 @32x32x16", 4, 4, (32, 32, 16), 3, 1),
    ("down 4->8 @32x32x16 s2", 4, 8, (32, 32, 16), 3, 2),
    ("block 8->8 @16x16x8", 8, 8, (16, 16, 8), 3, 1),
    ("head 4->2 @32x32x16 k1", 4, 2, (32, 32, 16), 1, 1),
]


def _timeit(fn, repeats):
    fn()  # warm (numba JIT, numpy buffers)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def _input_grad(impl, dy, w, x_shape, stride, pad):
    k = w.shape[2]
    if stride > 1:
        dil = np.zeros((dy.shape[0],) + tuple((o - 1) * stride + 1 for o in dy.shape[1:]),
                       dtype=dy.dtype)
        dil[:, ::stride, ::stride, ::stride] = dy
        dy = dil
    pads = [(0, 0)]
    for i in range(3):
        extra = (x_shape[1 + i] + 2 * pad - k) % stride
        pads.append((k - 1 - pad, k - 1 - pad + extra))
    dy = np.pad(dy, pads)
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
    return impl.conv3d_forward(np.ascontiguousarray(dy), w_t,
                               np.zeros(w_t.shape[0], dtype=dy.dtype), 1, 0)


def bench_convs(repeats):
    rng = np.random.default_rng(0)
    print(f"{'case':32s} {'numba':>12s} {'numpy':>12s} {'ratio':>7s}")
    for label, ci, co, spatial, k, stride in CONV_CASES:
        x = rng.normal(size=(ci,) + spatial).astype(np.float32)
        w = rng.normal(size=(co, ci, k, k, k)).astype(np.float32)
        b = np.zeros(co, dtype=np.float32)
        pad = k // 2
        out_spatial = tuple((n + 2 * pad - k) // stride + 1 for n in spatial)
        dy = rng.normal(size=(co,) + out_spatial).astype(np.float32)
        rows = {}
        for name, impl in (("numba", _numba), ("numpy", _numpy)):
            fwd = _timeit(lambda: impl.conv3d_forward(x, w, b, stride, pad), repeats)
            dwt = _timeit(lambda: impl.conv3d_weight_grad(dy, x, w.shape, stride, pad),
                          repeats)
            dxt = _timeit(lambda: _input_grad(impl, dy, w, x.shape, stride, pad),
                          repeats)
            rows[name] = fwd + dwt + dxt
        ratio = rows["numpy"] / rows["numba"]
        print(f"{label:32s} {rows['numba'] * 1e3:9.2f} ms {rows['numpy'] * 1e3:9.2f} ms "
              f"{ratio:6.2f}x")


def bench_crc(repeats):
    rng = np.random.default_rng(1)
    buf = rng.integers(0, 256, size=1 << 20, dtype=np.uint8)  # 1 MiB
    t_nb = _timeit(lambda: _numba.crc32c(buf), repeats)
    t_np = _timeit(lambda: _numpy.crc32c(buf), max(1, repeats // 4))
    print(f"{'crc32c 1MiB':32s} {t_nb * 1e3:9.2f} ms {t_np * 1e3:9.2f} ms "
          f"{t_np / t_nb:6.2f}x")


def bench_training_batch(repeats):
    # end-to-end: forward + backward on a batch of 6 exams per backend
    import os
    import subprocess
    import sys

    code = r"""
import time
import numpy as np
from mixvox.data.phantom import PhantomConfig, generate_dataset
from mixvox.data.normalize import normalize_exam
from mixvox.model import ModelConfig, GradeNet
from mixvox.autodiff import Tensor
from mixvox.losses import exam_targets, total_objective
from mixvox.data.exam import GradeBinning
from mixvox import kernels
exams = [normalize_exam(e) for e in generate_dataset(PhantomConfig(), 6, seed=1)]
net = GradeNet(ModelConfig(base_width=4, depth=2, num_bins=2, seed=0))
tgts = [exam_targets(e, GradeBinning.cs_detection()) for e in exams]
def step():
    outputs = [net.forward(Tensor(e.channels)) for e in exams]
    bd = total_objective(outputs, tgts, net.region_scores, (1, 1, 1, 1))
    net.zero_grad(); bd.total.backward()
step()
t0 = time.perf_counter()
for _ in range(%d):
    step()
print(f"{kernels.backend_name()}: {(time.perf_counter() - t0) / %d * 1e3:.1f} ms/batch")
""" % (repeats, repeats)
    print("\ntraining batch of 6 exams (width 4, depth 2, 32x32x16):")
    for backend in ("numba", "numpy"):
        env = dict(os.environ, MIXVOX_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True)
        print(" ", (out.stdout.strip() or out.stderr.strip().splitlines()[-1]))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    print("kernel timings (forward + weight grad + input grad):")
    bench_convs(args.repeats)
    bench_crc(args.repeats)
    bench_training_batch(max(3, args.repeats // 4))


if __name__ == "__main__":
    main()
