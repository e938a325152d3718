"""Ground distances between two embedded batches.

Same-class pairs get ``exp(-gamma * d)``, so far positives become cheap to
transport to.  Different-class pairs get ``exp(-gamma * max(0, eps - d))``,
so close negatives become cheap.  A transport plan over the combined matrix
therefore puts its mass on the hard pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from batchot.errors import InputError

__all__ = [
    "GroundMatrices",
    "GroundParams",
    "ground_matrices",
    "pairwise_sqdist",
    "similarity_mask",
]


@dataclass(frozen=True)
class GroundParams:
    gamma: float = 10.0
    epsilon: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise InputError(f"gamma must be > 0, got {self.gamma!r}")
        if not self.epsilon > 0:
            raise InputError(f"epsilon must be > 0, got {self.epsilon!r}")


@dataclass(frozen=True)
class GroundMatrices:
    """All per-cell quantities for one batch pair.

    Attributes:
        d: squared Euclidean distances.
        m_pos: ``exp(-gamma * d)``.
        m_neg: ``exp(-gamma * max(0, epsilon - d))``.
        m_star: ``m_pos`` on same-class cells, ``m_neg`` elsewhere.
        y: 1 where the labels agree.
        delta: 1 where ``epsilon - d > 0``.
        params: the ``GroundParams`` used to build the matrices.
    """

    d: np.ndarray
    m_pos: np.ndarray
    m_neg: np.ndarray
    m_star: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    params: GroundParams

    @property
    def epsilon(self) -> float:
        return self.params.epsilon

    @property
    def n(self) -> int:
        return self.d.shape[0]


def _embedding(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"{name} must be a 2-D (batch, dim) array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} has non-finite entries")
    return x


def pairwise_sqdist(f1, f2) -> np.ndarray:
    """Squared Euclidean distance between every row of ``f1`` and of ``f2``.

    Computed as a direct difference rather than ``|a|^2 + |b|^2 - 2ab`` so
    that coincident points give exactly zero.
    """
    f1 = _embedding(f1, "f1")
    f2 = _embedding(f2, "f2")
    if f1.shape[1] != f2.shape[1]:
        raise InputError(f"embedding dims differ: {f1.shape[1]} vs {f2.shape[1]}")
    diff = f1[:, None, :] - f2[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def similarity_mask(labels1, labels2) -> np.ndarray:
    labels1 = np.asarray(labels1)
    labels2 = np.asarray(labels2)
    if labels1.ndim != 1 or labels2.ndim != 1:
        raise InputError("labels must be 1-D")
    if labels1.shape != labels2.shape:
        raise InputError(f"label lengths differ: {labels1.size} vs {labels2.size}")
    if np.any(labels1 < 0) or np.any(labels2 < 0):
        raise InputError("labels must be non-negative")
    return (labels1[:, None] == labels2[None, :]).astype(np.float64)


def ground_matrices(f1, f2, labels1, labels2, params: GroundParams | None = None) -> GroundMatrices:
    params = params or GroundParams()
    d = pairwise_sqdist(f1, f2)
    y = similarity_mask(labels1, labels2)
    if y.shape != d.shape:
        raise InputError(f"labels shape {y.shape} does not match batch shape {d.shape}")
    slack = params.epsilon - d
    m_pos = np.exp(-params.gamma * d)
    m_neg = np.exp(-params.gamma * np.maximum(0.0, slack))
    m_star = y * m_pos + (1.0 - y) * m_neg
    delta = (slack > 0).astype(np.float64)
    return GroundMatrices(d=d, m_pos=m_pos, m_neg=m_neg, m_star=m_star, y=y, delta=delta, params=params)
