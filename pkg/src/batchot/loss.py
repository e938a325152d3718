"""Batch-wise transport loss, its embedding gradients, and baselines.

The plan ``T`` is treated as constant data: neither it nor the exponential
re-scaling is differentiated through.  The gradient returned by
``otl_gradient`` is therefore the exact gradient of the T-weighted
contrastive ``surrogate`` field, not of ``total``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from batchot.errors import InputError
from batchot.ground import GroundMatrices, pairwise_sqdist
from batchot.ot import Marginals, SinkhornConfig, TransportPlan, sinkhorn

__all__ = [
    "LossValue",
    "Weighting",
    "WeightingMode",
    "contrastive_loss",
    "make_weights",
    "otl_forward",
    "otl_gradient",
    "triplet_loss",
]


@dataclass(frozen=True)
class LossValue:
    total: float
    positive_part: float
    negative_part: float
    surrogate: float


class Weighting(str, Enum):
    OPTIMAL_TRANSPORT = "optimal_transport"
    UNIFORM_MEAN = "uniform_mean"
    RANDOM = "random"


@dataclass(frozen=True)
class WeightingMode:
    kind: Weighting = Weighting.OPTIMAL_TRANSPORT
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Weighting(self.kind))


def _plan(t) -> np.ndarray:
    return t.t if isinstance(t, TransportPlan) else np.asarray(t, dtype=np.float64)


def _check_plan(g: GroundMatrices, t: np.ndarray) -> None:
    if t.shape != g.d.shape:
        raise InputError(f"plan shape {t.shape} does not match ground shape {g.d.shape}")


def otl_forward(g: GroundMatrices, t) -> LossValue:
    t = _plan(t)
    _check_plan(g, t)
    pos = 0.5 * float(np.sum(g.y * t * g.m_pos))
    neg = 0.5 * float(np.sum((1.0 - g.y) * t * g.m_neg))
    hinge = np.maximum(0.0, g.epsilon - g.d)
    surrogate = float(np.sum(t * (g.y * 0.5 * g.d + (1.0 - g.y) * 0.5 * hinge)))
    return LossValue(total=pos + neg, positive_part=pos, negative_part=neg, surrogate=surrogate)


def otl_gradient(f1, f2, g: GroundMatrices, t) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the surrogate with respect to both embedding batches.

    ``grad_f1[i] = sum_j w_ij (f1_i - f2_j)`` and
    ``grad_f2[j] = -sum_i w_ij (f1_i - f2_j)`` with
    ``w = T * (Y - (1 - Y) * delta)``.
    """
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    t = _plan(t)
    _check_plan(g, t)
    if f1.shape[0] != g.n or f2.shape[0] != g.n or f1.shape[1] != f2.shape[1]:
        raise InputError(f"embedding shapes {f1.shape}, {f2.shape} do not fit a {g.n}x{g.n} ground")
    w = t * (g.y - (1.0 - g.y) * g.delta)
    grad_f1 = w.sum(axis=1)[:, None] * f1 - w @ f2
    grad_f2 = w.sum(axis=0)[:, None] * f2 - w.T @ f1
    return grad_f1, grad_f2


def _aligned(*arrays):
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    shape = arrays[0].shape
    if arrays[0].ndim != 2 or any(a.shape != shape for a in arrays):
        raise InputError(f"aligned batches must share one 2-D shape, got {[a.shape for a in arrays]}")
    return arrays


def contrastive_loss(f1, f2, y, epsilon: float):
    """Mean pair-wise contrastive loss over aligned rows.

    Returns ``(loss, grad_f1, grad_f2)``.
    """
    f1, f2 = _aligned(f1, f2)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (f1.shape[0],):
        raise InputError(f"pair labels must have shape ({f1.shape[0]},), got {y.shape}")
    n = f1.shape[0]
    diff = f1 - f2
    d = np.einsum("ij,ij->i", diff, diff)
    slack = epsilon - d
    loss = float(np.mean(y * d + (1.0 - y) * np.maximum(0.0, slack)))
    coef = 2.0 * (y - (1.0 - y) * (slack > 0)) / n
    grad_f1 = coef[:, None] * diff
    return loss, grad_f1, -grad_f1


def contrastive_parts(f1, f2, y, epsilon: float) -> tuple[float, float]:
    """Similar-pair and dissimilar-pair shares of ``contrastive_loss``."""
    f1, f2 = _aligned(f1, f2)
    y = np.asarray(y, dtype=np.float64)
    diff = f1 - f2
    d = np.einsum("ij,ij->i", diff, diff)
    n = f1.shape[0]
    return float(np.sum(y * d) / n), float(np.sum((1.0 - y) * np.maximum(0.0, epsilon - d)) / n)


def triplet_loss(anchor, positive, negative, epsilon: float):
    """Mean hinge ``max(0, d_ap - d_an + eps)`` over aligned triplets.

    Returns ``(loss, (grad_anchor, grad_positive, grad_negative))``.  The
    subgradient at the kink is taken as zero.
    """
    a, p, q = _aligned(anchor, positive, negative)
    n = a.shape[0]
    dp = a - p
    dn = a - q
    margin = np.einsum("ij,ij->i", dp, dp) - np.einsum("ij,ij->i", dn, dn) + epsilon
    loss = float(np.mean(np.maximum(0.0, margin)))
    active = (margin > 0).astype(np.float64)[:, None] * (2.0 / n)
    grad_p = -active * dp
    grad_q = active * dn
    grad_a = -(grad_p + grad_q)
    return loss, (grad_a, grad_p, grad_q)


def make_weights(
    mode: WeightingMode,
    g: GroundMatrices,
    cfg: SinkhornConfig | None = None,
    rng: np.random.Generator | None = None,
) -> TransportPlan:
    """Weight matrix for one batch pair under the chosen weighting.

    ``rng`` overrides ``mode.seed`` for the random mode, so a training loop
    can draw fresh weights every step from one seeded stream.
    """
    n = g.n
    if mode.kind is Weighting.OPTIMAL_TRANSPORT:
        return sinkhorn(g.m_star, Marginals.uniform(n), cfg)
    if mode.kind is Weighting.UNIFORM_MEAN:
        return TransportPlan(t=np.full((n, n), 1.0 / n**2), is_coupling=False)
    rng = rng if rng is not None else np.random.default_rng(mode.seed)
    # random() is [0, 1); reject exact zeros to keep weights in (0, 1)
    w = rng.random((n, n))
    while np.any(w == 0.0):
        w[w == 0.0] = rng.random(np.count_nonzero(w == 0.0))
    return TransportPlan(t=w / w.sum(), is_coupling=False)


def surrogate_value(f1, f2, labels_mask, t, epsilon: float) -> float:
    """T-weighted contrastive value recomputed from raw embeddings.

    Used by the finite-difference checks, which perturb embeddings while
    keeping ``t`` fixed.
    """
    d = pairwise_sqdist(f1, f2)
    y = labels_mask
    t = _plan(t)
    return float(np.sum(t * (y * 0.5 * d + (1.0 - y) * 0.5 * np.maximum(0.0, epsilon - d))))
