"""Cholesky-style correlation combiner.

Mixing two signals as ``rho * a + sqrt(1 - rho^2) * b`` with
``rho = alpha / sqrt(1 + alpha^2)`` yields an output correlated with ``a`` by
``rho`` and with ``b`` by ``sqrt(1 - rho^2)`` (for standardised independent
inputs). Chaining the mix over all primary capsules gives one decision
vector per class whose expansion weights have unit squared norm.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .capsules import squash
from .config import ConfigError
from .tensor import Tensor


def mix_coefficients(alpha):
    """(alpha / sqrt(1 + alpha^2), 1 / sqrt(1 + alpha^2)); works on arrays or Tensors."""
    if isinstance(alpha, Tensor):
        inv = 1.0 / T.sqrt(alpha * alpha + 1.0)
        return alpha * inv, inv
    alpha = np.asarray(alpha, dtype=float)
    inv = 1.0 / np.sqrt(1.0 + alpha * alpha)
    return alpha * inv, inv


def cholesky_mix(d1, d2, alpha):
    rho, rest = mix_coefficients(alpha)
    if isinstance(rho, Tensor) or isinstance(d1, Tensor) or isinstance(d2, Tensor):
        return T.as_tensor(d1) * rho + T.as_tensor(d2) * rest
    return rho * np.asarray(d1) + rest * np.asarray(d2)


def f_rho(predictions: Tensor, alphas: Tensor, order: str = "forward") -> Tensor:
    """Fold the pairwise mix over capsules k = 2..K for every class.

    predictions: (B, K, J, I_d); alphas: (B, J, K-1) with ``alphas[..., k-2]``
    weighting capsule k's step. Returns C (B, J, I_d).
    """
    if predictions.ndim != 4:
        raise T.ShapeError("f_rho", [predictions.shape, alphas.shape])
    bsz, k, j, _ = predictions.shape
    if k < 2:
        raise ConfigError("the correlation recursion needs at least two capsules")
    if alphas.shape != (bsz, j, k - 1):
        raise T.ShapeError("f_rho", [predictions.shape, alphas.shape])
    if order == "reversed":
        predictions = T.slice_(predictions, (slice(None), slice(None, None, -1)))
    elif order != "forward":
        raise ConfigError(f"unknown capsule order {order!r}")
    rho, rest = mix_coefficients(T.transpose(alphas, (0, 2, 1)))
    return T.weighted_recurrence(rho, rest, predictions)


def expansion_weights(alphas: np.ndarray) -> np.ndarray:
    """Closed-form weights w with C = sum_k w_k P_k, for one alpha sequence (len K-1).

    w_K = 1/sqrt(1+a_K^2); w_k = 1/sqrt(1+a_k^2) * prod_{m>k} rho_m for k >= 2;
    w_1 = prod_{m>=2} rho_m.
    """
    a = np.asarray(alphas, dtype=float)
    rho, inv = mix_coefficients(a)
    k = a.size + 1
    w = np.empty(k)
    tail = 1.0
    for idx in range(k - 1, 0, -1):
        w[idx] = inv[idx - 1] * tail
        tail *= rho[idx - 1]
    w[0] = tail
    return w


def alpha_feature_map(stats: Tensor, features: Tensor | None = None, channel: int = -1) -> Tensor:
    """The N x N map the alpha kernels read: statistic mean over depth, or one stem channel."""
    if channel < 0:
        return T.mean(stats, axis=-1)
    if features is None:
        raise ConfigError("a stem channel was requested but no features were given")
    return T.slice_(features, (slice(None), slice(None), slice(None), channel))


def compute_alphas(feature_map: Tensor, kernels: Tensor) -> Tensor:
    """Full-size kernels: alpha[b, j, k] = sum_xy kernels[j, k] * map[b]; -> (B, J, K-1)."""
    if feature_map.ndim != 3 or kernels.ndim != 4 or kernels.shape[2:] != feature_map.shape[1:]:
        raise T.ShapeError("compute_alphas", [feature_map.shape, kernels.shape])
    return T.einsum("bxy,jkxy->bjk", feature_map, kernels)


def combine(routed: Tensor, correlated: Tensor, lam: float) -> Tensor:
    """squash((1 - lam) * routed + lam * correlated)."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("lambda must lie in [0, 1]")
    return squash(routed * (1.0 - lam) + correlated * lam)
