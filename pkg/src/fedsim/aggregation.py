"""Model-combination primitives shared by every algorithm.

Weighted (convex) parameter averaging, the gradient-sharing server
variant, noisy channel transmission with message accounting, and the
deterministic participation coin flip.  Everything here is a pure
function of its arguments, including the "random" parts: noise and
participation derive their generators from explicit context ids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .learner import ModelParams
from .metrics import LINK_TYPES, MetricsLog
from .seeds import derive_rng

__all__ = [
    "AggregationWeights",
    "NoiseModel",
    "uniform_weights",
    "size_weights",
    "weighted_average",
    "gradient_aggregate",
    "transmit",
    "participates",
]

WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True)
class AggregationWeights:
    """Non-negative per-contributor weights summing to 1."""

    weights: dict[int, float]

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("need at least one weight")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("aggregation weights must be non-negative")
        total = sum(self.weights.values())
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"aggregation weights sum to {total!r}, not 1")


def uniform_weights(ids: Sequence[int]) -> AggregationWeights:
    share = 1.0 / len(ids)
    return AggregationWeights({int(k): share for k in ids})


def size_weights(sizes: Mapping[int, int]) -> AggregationWeights:
    """Weights proportional to dataset sizes, renormalized over the given ids."""
    total = sum(sizes.values())
    if total <= 0:
        raise ValueError("dataset sizes must sum to a positive value")
    return AggregationWeights({int(k): size / total for k, size in sizes.items()})


def weighted_average(models: Mapping[int, ModelParams], w: AggregationWeights) -> ModelParams:
    """Convex combination sum_k w_k * theta_k.

    Contributors are accumulated in sorted-id order, so the result is
    bit-for-bit independent of dict construction order.
    """
    if not models:
        raise ValueError("need at least one model")
    if set(models) != set(w.weights):
        raise ValueError("weights must cover exactly the listed models")
    ids = sorted(models)
    first = models[ids[0]]
    out = np.zeros_like(first.values)
    for k in ids:
        model = models[k]
        if model.arch_id != first.arch_id:
            raise ValueError("cannot aggregate models of different architectures")
        out += w.weights[k] * model.values
    return ModelParams(out, first.arch)


def gradient_aggregate(base: ModelParams, grads: Mapping[int, np.ndarray],
                       w: AggregationWeights, lr: float) -> ModelParams:
    """Gradient-sharing server step: theta - lr * sum_k w_k * grad_k."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not grads:
        raise ValueError("need at least one gradient")
    if set(grads) != set(w.weights):
        raise ValueError("weights must cover exactly the listed gradients")
    out = base.values.copy()
    for k in sorted(grads):
        grad = np.asarray(grads[k], dtype=np.float64)
        if grad.shape != base.values.shape:
            raise ValueError("gradient length must match the model")
        out -= lr * w.weights[k] * grad
    return ModelParams(out, base.arch)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian channel noise; variance 0 is an ideal link."""

    variance: float = 0.0

    def __post_init__(self) -> None:
        if self.variance < 0:
            raise ValueError("noise variance must be non-negative")


def transmit(m: ModelParams, noise: NoiseModel, link: str, sink: MetricsLog, *,
             seed: int, round_index: int, sender: int, receiver: int) -> ModelParams:
    """Send a model over a link: count one message, apply per-message noise.

    The noise vector is a pure function of (seed, link, round, sender,
    receiver), so replaying the same context reproduces the same corrupted
    model.  With variance 0 the input object is returned unchanged.
    """
    if link not in LINK_TYPES:
        raise ValueError(f"unknown link type {link!r}")
    sink.record_message(link, round_index)
    if noise.variance == 0.0:
        return m
    rng = derive_rng(seed, "noise", link, round_index, sender, receiver)
    eps = rng.normal(0.0, np.sqrt(noise.variance), size=m.values.shape)
    return ModelParams(m.values + eps, m.arch)


def participates(prob: float, *, seed: int, round_index: int, node: int, kind: str) -> bool:
    """Deterministic Bernoulli draw for one (node, round, decision-kind)."""
    if not 0.0 <= prob <= 1.0:
        raise ValueError("participation probability must lie in [0, 1]")
    rng = derive_rng(seed, "participate", kind, round_index, node)
    return bool(rng.random() < prob)
