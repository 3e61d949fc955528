"""Trainable initial routing logits derived from primary-capsule statistics."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .capsules import CapsuleGrid
from .config import ConfigError
from .tensor import Tensor


def statistic_map(grid: CapsuleGrid, epsilon: float) -> Tensor:
    """mean / max(population std, epsilon) per capsule -> (B, N, N, D)."""
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    mu = T.mean(grid.poses, axis=-1)
    sigma = T.std(grid.poses, axis=-1)
    return mu / T.maximum(sigma, epsilon)


def kernel_pass(stats: Tensor, kernel: Tensor) -> Tensor:
    """Apply one shared f x f kernel to every depth slice, 'same' zero padding."""
    f = kernel.shape[0]
    if kernel.ndim != 2 or kernel.shape[1] != f:
        raise T.ShapeError("kernel_pass", [stats.shape, kernel.shape], "kernel must be f x f")
    if f % 2 == 0:
        raise ConfigError("f must be odd")
    bsz, n1, n2, depth = stats.shape
    # fold depth into the batch so one (f, f, 1, 1) filter serves all slices
    x = T.reshape(T.transpose(stats, (0, 3, 1, 2)), (bsz * depth, n1, n2, 1))
    y = T.conv2d(x, T.reshape(kernel, (f, f, 1, 1)), stride=1, padding=(f - 1) // 2)
    return T.transpose(T.reshape(y, (bsz, depth, n1, n2)), (0, 2, 3, 1))


def build_B(filtered: Tensor, num_classes: int) -> Tensor:
    """Flatten each map row-major to b_hat and repeat it across classes -> (B, K, J)."""
    bsz = filtered.shape[0]
    k = int(np.prod(filtered.shape[1:]))
    b_hat = T.reshape(filtered, (bsz, k, 1))
    return T.broadcast_to(b_hat, (bsz, k, num_classes))


def init_kernel(f: int, noise: float, rng: np.random.Generator, center: float = 1.0) -> np.ndarray:
    """Scaled delta kernel plus small zero-mean noise."""
    kernel = rng.normal(0.0, noise, size=(f, f)) if noise > 0 else np.zeros((f, f))
    kernel[f // 2, f // 2] += center
    return kernel
