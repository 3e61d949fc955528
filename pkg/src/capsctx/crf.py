"""Dense CRF over the decision axis of primary-capsule predictions.

For every primary capsule k and element i the J values P[k, :, i] form one
fully connected CRF. Mean-field inference is unrolled as differentiable
layers: softmax initialisation, a learned pairwise message over J with a
zero diagonal, subtraction, and renormalisation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ConfigError
from .tensor import Tensor

_J_AXIS = 2


@dataclass
class MeanFieldState:
    marginals: Tensor  # (B, K, J, I_d), sums to 1 over J
    iteration: int = 0


def off_diagonal_mask(num_classes: int, dtype=np.float64) -> np.ndarray:
    return 1.0 - np.eye(num_classes, dtype=dtype)


def masked_pairwise(weights: Tensor) -> Tensor:
    """Zero the j == j' entries; weights is (J, J) or (I_d, J, J)."""
    mask = off_diagonal_mask(weights.shape[-1], weights.dtype)
    return weights * T.Tensor(mask)


def crf_init(predictions: Tensor) -> MeanFieldState:
    """Softmax over decision capsules of each prediction element (P = -E_u)."""
    return MeanFieldState(T.softmax(predictions, axis=_J_AXIS), 0)


def pairwise_message(marginals: Tensor, weights: Tensor) -> Tensor:
    """Sum_j' M[j, j'] H[.., j', i]; shared M (J, J) or per-element M (I_d, J, J)."""
    m = masked_pairwise(weights)
    if m.ndim == 2:
        return T.einsum("jm,bkmi->bkji", m, marginals)
    return T.einsum("ijm,bkmi->bkji", m, marginals)


def crf_step(state: MeanFieldState, weights: Tensor) -> MeanFieldState:
    message = pairwise_message(state.marginals, weights)
    return MeanFieldState(T.softmax(state.marginals - message, axis=_J_AXIS), state.iteration + 1)


def crf_iterate(state: MeanFieldState, weights: Tensor, max_iter: int = 3,
                trace: list | None = None) -> Tensor:
    """Run ``max_iter`` mean-field updates; returns the refined marginals.

    If ``trace`` is a list, every intermediate state is appended to it.
    """
    if max_iter < 1:
        raise ConfigError("CRF needs at least one iteration")
    _check_weights(state.marginals, weights)
    for _ in range(max_iter):
        state = crf_step(state, weights)
        if trace is not None:
            trace.append(state)
    return state.marginals


def crf(predictions: Tensor, weights: Tensor, max_iter: int = 3) -> Tensor:
    return crf_iterate(crf_init(predictions), weights, max_iter)


def crf_energy(predictions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-(k, i) energy: -sum_j P + sum_{j != j'} M[j, j'] P_j P_j'.

    Diagnostic only; predictions (..., K, J, I_d) -> (..., K, I_d).
    """
    p = np.asarray(predictions)
    w = np.asarray(weights)
    m = w * off_diagonal_mask(w.shape[-1], w.dtype)
    unary = -p.sum(axis=-2)
    if m.ndim == 2:
        pair = np.einsum("...ji,jm,...mi->...i", p, m, p)
    else:
        pair = np.einsum("...ji,ijm,...mi->...i", p, m, p)
    return unary + pair


def _check_weights(marginals: Tensor, weights: Tensor) -> None:
    j = marginals.shape[_J_AXIS]
    ok = weights.shape[-2:] == (j, j) and (
        weights.ndim == 2 or (weights.ndim == 3 and weights.shape[0] == marginals.shape[-1])
    )
    if not ok:
        raise T.ShapeError("crf", [marginals.shape, weights.shape])


def init_pairwise(num_classes: int, decision_dim: int, share: str, scale: float,
                  rng: np.random.Generator, gain: float = 0.0) -> np.ndarray:
    """Off-diagonal M = gain·J − 1 plus N(0, scale) noise.

    With a uniform off-diagonal value m one mean-field step is
    softmax((1 + m)·H − m), which near the uniform marginal scales deviations
    by (1 + m)/J. gain = 1 makes a step neutral; gain = 0 leaves only noise.
    """
    shape = (num_classes, num_classes) if share == "all" else (decision_dim, num_classes, num_classes)
    m = rng.normal(0.0, scale, size=shape) if scale > 0 else np.zeros(shape)
    if gain:
        m = m + (gain * num_classes - 1.0)
    return m * off_diagonal_mask(num_classes)
