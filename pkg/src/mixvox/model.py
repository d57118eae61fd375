"""Residual 3D encoder-decoder with voxel heads and a region classifier.

The backbone is a small fully-convolutional residual UNet: residual blocks
of two 3x3x3 convs per level, strided-conv downsampling, nearest-neighbor
upsampling with additive skips. Two 1x1x1 heads map the finest features to
a tanh lesion-risk volume and a channel-softmax grade-membership volume.
Region scores come from a single-layer classifier whose weight matrix is
frozen to the identity; only its bias (a vector of per-bin detection
thresholds) is trainable.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    conv3d,
    kaiming_uniform,
    relu,
    seeded_rng,
    softmax,
    tanh,
    upsample_nearest,
    zeros_param,
)
from .errors import ConfigError, NumericsError, ShapeError


@dataclass
class ModelConfig:
    in_channels: int = 3
    base_width: int = 8
    depth: int = 3
    num_bins: int = 2
    seed: int = 0
    # Conservative prior on the region thresholds: a region declares a grade
    # present only once its histogram mass clears this margin, so early
    # checkpoints are specific and training walks the bias upward through
    # the useful operating band.
    region_bias_init: float = -0.35

    def __post_init__(self):
        if self.num_bins < 2:
            raise ConfigError(f"num_bins must be >= 2, got {self.num_bins}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_width < 1:
            raise ConfigError(f"base_width must be >= 1, got {self.base_width}")

    @property
    def widths(self):
        return [self.base_width * (2 ** l) for l in range(self.depth)]


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count (k^3 conv kernels plus biases)."""
    k3 = 27
    w = cfg.widths
    total = w[0] * cfg.in_channels * k3 + w[0]  # stem
    for l in range(cfg.depth - 1):
        total += 2 * (w[l] * w[l] * k3 + w[l])          # encoder block
        total += w[l + 1] * w[l] * k3 + w[l + 1]        # downsample conv
    total += 2 * (w[-1] * w[-1] * k3 + w[-1])           # bottom block
    for l in range(cfg.depth - 2, -1, -1):
        total += w[l] * w[l + 1] * k3 + w[l]            # upsample conv
        total += 2 * (w[l] * w[l] * k3 + w[l])          # decoder block
    total += 1 * w[0] + 1                               # risk head (1x1x1)
    total += cfg.num_bins * w[0] + cfg.num_bins         # grade head (1x1x1)
    total += cfg.num_bins                               # region thresholds
    return total


class GradeNet:
    """Parameter container plus forward pass. Parameters are reused across
    steps; inference over distinct exams may run concurrently since forward
    never mutates them."""

    def __init__(self, config: ModelConfig, dtype=None):
        self.config = config
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.no_decay: set = set()
        self._dtype = dtype
        self._build()

    def _conv_param(self, rng, name, co, ci, k):
        w = kaiming_uniform(rng, (co, ci, k, k, k), fan_in=ci * k ** 3, dtype=self._dtype)
        b = zeros_param((co,), dtype=self._dtype)
        w.name, b.name = f"{name}.w", f"{name}.b"
        self.params[w.name] = w
        self.params[b.name] = b
        self.no_decay.add(b.name)
        return w, b

    def _build(self):
        cfg = self.config
        rng = seeded_rng(cfg.seed)
        w = cfg.widths
        self._conv_param(rng, "stem", w[0], cfg.in_channels, 3)
        for l in range(cfg.depth - 1):
            self._conv_param(rng, f"enc{l}.conv1", w[l], w[l], 3)
            self._conv_param(rng, f"enc{l}.conv2", w[l], w[l], 3)
            self._conv_param(rng, f"down{l}", w[l + 1], w[l], 3)
        self._conv_param(rng, "bottom.conv1", w[-1], w[-1], 3)
        self._conv_param(rng, "bottom.conv2", w[-1], w[-1], 3)
        for l in range(cfg.depth - 2, -1, -1):
            self._conv_param(rng, f"up{l}", w[l], w[l + 1], 3)
            self._conv_param(rng, f"dec{l}.conv1", w[l], w[l], 3)
            self._conv_param(rng, f"dec{l}.conv2", w[l], w[l], 3)
        self._conv_param(rng, "risk_head", 1, w[0], 1)
        self._conv_param(rng, "grade_head", cfg.num_bins, w[0], 1)
        bias = zeros_param((cfg.num_bins,), dtype=self._dtype)
        bias.data[:] = cfg.region_bias_init
        bias.name = "region_bias"
        self.params["region_bias"] = bias
        self.no_decay.add("region_bias")

    @property
    def region_bias(self) -> Tensor:
        return self.params["region_bias"]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def _block(self, x, name):
        p = self.params
        h = relu(conv3d(x, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"]))
        h = conv3d(h, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"])
        out = relu(add(h, x))
        self._check(out, name)
        return out

    @staticmethod
    def _check(t, layer):
        # single reduce: the sum is non-finite iff any element is
        if not np.isfinite(np.sum(t.data)):
            raise NumericsError(f"non-finite activations after layer {layer!r}")

    def forward(self, x):
        """x: Tensor (in_channels, X, Y, Z) -> (risk (1,X,Y,Z), grade (K,X,Y,Z))."""
        cfg = self.config
        p = self.params
        if x.data.ndim != 4 or x.data.shape[0] != cfg.in_channels:
            raise ShapeError(
                f"expected ({cfg.in_channels}, X, Y, Z) input, got {x.data.shape}"
            )
        divisor = 2 ** (cfg.depth - 1)
        if any(n % divisor for n in x.data.shape[1:]):
            raise ShapeError(
                f"spatial extents {x.data.shape[1:]} not divisible by {divisor}"
            )
        if not np.all(np.isfinite(x.data)):
            raise NumericsError("non-finite values in network input")

        h = relu(conv3d(x, p["stem.w"], p["stem.b"]))
        self._check(h, "stem")
        skips = []
        for l in range(cfg.depth - 1):
            h = self._block(h, f"enc{l}")
            skips.append(h)
            h = relu(conv3d(h, p[f"down{l}.w"], p[f"down{l}.b"], stride=2))
            self._check(h, f"down{l}")
        h = self._block(h, "bottom")
        for l in range(cfg.depth - 2, -1, -1):
            h = upsample_nearest(h, 2)
            h = relu(conv3d(h, p[f"up{l}.w"], p[f"up{l}.b"]))
            h = add(h, skips[l])
            h = self._block(h, f"dec{l}")
        risk = tanh(conv3d(h, p["risk_head.w"], p["risk_head.b"]))
        self._check(risk, "risk_head")
        grade = softmax(conv3d(h, p["grade_head.w"], p["grade_head.b"]), axis=0)
        self._check(grade, "grade_head")
        return risk, grade

    def region_scores(self, hist_row):
        """Threshold classifier: relu(identity @ hist + bias) = relu(hist + bias)."""
        return relu(add(hist_row, self.region_bias))
