"""Seeded random streams and parameter initialization."""

import numpy as np

from .tensor import Tensor, default_dtype


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seeds give bit-identical streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> Tensor:
    """Fan-in-scaled uniform init: bound sqrt(3 / fan_in), variance 1/fan_in."""
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    bound = np.sqrt(3.0 / fan_in)
    values = rng.uniform(-bound, bound, size=shape)
    return Tensor(values, requires_grad=True, dtype=dtype or default_dtype())


def zeros_param(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype or default_dtype())
