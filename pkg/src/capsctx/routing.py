"""Routing-by-agreement between primary and decision capsules."""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .capsules import squash
from .config import ConfigError
from .tensor import Tensor

_AXES = {"k": 1, "j": 2}


@dataclass
class RoutingState:
    logits: Tensor     # (B, K, J), the logits that produced ``couplings``
    couplings: Tensor  # (B, K, J)
    iterations: int


def route(predictions: Tensor, init_logits: Tensor, iterations: int = 3, axis: str = "k"):
    """Run ``iterations`` rounds of dynamic routing.

    predictions: (B, K, J, I_d); init_logits: (B, K, J) or broadcastable.
    ``axis`` names the softmax axis for the couplings: ``"k"`` normalises over
    input capsules, ``"j"`` over decision capsules (the classic CapsNet rule).
    Returns the last iteration's pre-squash decision capsules (B, J, I_d) and
    the routing state.
    """
    if iterations < 1:
        raise ConfigError("routing needs at least one iteration")
    if axis not in _AXES:
        raise ConfigError(f"unknown routing axis {axis!r}")
    if predictions.ndim != 4 or init_logits.shape[-2:] != predictions.shape[1:3]:
        raise T.ShapeError("route", [predictions.shape, init_logits.shape])
    logits = init_logits
    for it in range(iterations):
        couplings = T.softmax(logits, axis=_AXES[axis])
        s = T.einsum("bkj,bkjd->bjd", couplings, predictions)
        if it == iterations - 1:
            break
        v = squash(s)
        logits = logits + T.einsum("bkjd,bjd->bkj", predictions, v)
    return s, RoutingState(logits, couplings, iterations)
