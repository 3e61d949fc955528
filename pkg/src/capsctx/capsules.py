"""Baseline capsule machinery: conv stem, primary capsules, squash, predictions."""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .config import ConfigError
from .tensor import Tensor

SQUASH_DELTA = 1e-9


@dataclass
class CapsuleGrid:
    """Squashed primary capsule poses, shape (B, N, N, D, I_p)."""

    poses: Tensor

    @property
    def grid_size(self) -> int:
        return self.poses.shape[1]

    @property
    def depth(self) -> int:
        return self.poses.shape[3]

    @property
    def dim(self) -> int:
        return self.poses.shape[4]

    @property
    def num_capsules(self) -> int:
        n = self.grid_size
        return n * n * self.depth

    def flat(self) -> Tensor:
        """Capsules in row-major grid order, shape (B, K, I_p)."""
        b = self.poses.shape[0]
        return T.reshape(self.poses, (b, self.num_capsules, self.dim))


def stem_output_size(image_size: int, kernel: int, stride1: int, stride2: int) -> int:
    first = T.conv2d_output_size(image_size, kernel, stride1)
    if first < kernel:
        return 0
    return T.conv2d_output_size(first, kernel, stride2)


def check_stem(image_size: int, kernel: int, stride1: int, stride2: int, grid_size: int) -> None:
    got = stem_output_size(image_size, kernel, stride1, stride2)
    if got != grid_size:
        raise ConfigError(
            f"stem maps {image_size}x{image_size} to {got}x{got}, but grid_size is {grid_size}"
        )


def conv_stem(image: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
              stride1: int = 2, stride2: int = 1) -> Tensor:
    """Two valid convolutions; ReLU after the first only. (B,H,W,C) -> (B,N,N,Z)."""
    h = T.relu(T.conv2d(image, w1, stride=stride1) + b1)
    return T.conv2d(h, w2, stride=stride2) + b2


def squash(v: Tensor, axis: int = -1) -> Tensor:
    """(|v|^2 / (1 + |v|^2)) * v / (|v| + delta); maps 0 to 0."""
    n = T.norm(v, axis=axis, keepdims=True)
    n2 = n * n
    return v * (n2 / ((n2 + 1.0) * (n + SQUASH_DELTA)))


def form_primary_capsules(features: Tensor, primary_dim: int) -> CapsuleGrid:
    """Group channels contiguously into capsules and squash each one."""
    bsz, n1, n2, z = features.shape
    if z % primary_dim != 0:
        raise ConfigError(f"Z={z} is not divisible by primary_dim={primary_dim}")
    depth = z // primary_dim
    poses = T.reshape(features, (bsz, n1, n2, depth, primary_dim))
    return CapsuleGrid(squash(poses))


def predict(u: Tensor, w: Tensor) -> Tensor:
    """P[b,k,j] = u[b,k] @ W[k,j]; u (B,K,I_p), W (K,J,I_p,I_d) -> (B,K,J,I_d)."""
    if u.ndim != 3 or w.ndim != 4 or u.shape[1] != w.shape[0] or u.shape[2] != w.shape[2]:
        raise T.ShapeError("predict", [u.shape, w.shape])
    return T.einsum("bki,kjid->bkjd", u, w)
