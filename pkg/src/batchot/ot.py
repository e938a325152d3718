"""Discrete optimal transport between two batch measures.

The entropic solver follows the usual Sinkhorn matrix-scaling scheme:
``K = exp(-lambda * M)``, alternate ``u = r / (K v)`` and ``v = c / (K^T u)``,
and return ``diag(u) K diag(v)``.  A log-domain variant is provided for large
``lambda * M`` where ``exp`` underflows.

``exact_ot`` is a brute-force oracle over permutation matrices and is only
meant for tests on tiny problems.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from batchot.errors import InputError, SolverError, UnsupportedOracleError

__all__ = [
    "Marginals",
    "SinkhornConfig",
    "TransportPlan",
    "exact_ot",
    "plan_entropy",
    "sinkhorn",
    "transport_cost",
]

EXACT_OT_MAX_N = 8


@dataclass(frozen=True)
class Marginals:
    """Source and target probability vectors."""

    r: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        for name, vec in (("r", r), ("c", c)):
            if vec.ndim != 1 or vec.size == 0:
                raise InputError(f"marginal {name} must be a non-empty vector")
            if not np.all(np.isfinite(vec)) or np.any(vec <= 0):
                raise InputError(f"marginal {name} must be strictly positive")
            if abs(math.fsum(vec) - 1.0) > 1e-12:
                raise InputError(f"marginal {name} must sum to 1, got {math.fsum(vec)!r}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "c", c)

    @classmethod
    def uniform(cls, n: int, m: int | None = None) -> "Marginals":
        m = n if m is None else m
        return cls(np.full(n, 1.0 / n), np.full(m, 1.0 / m))

    @property
    def is_uniform(self) -> bool:
        n = self.r.size
        return (
            self.r.size == self.c.size
            and np.all(np.abs(self.r - 1.0 / n) <= 1e-15)
            and np.all(np.abs(self.c - 1.0 / n) <= 1e-15)
        )


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver settings.

    With ``convergence_tolerance == 0`` the solver runs exactly
    ``max_iterations`` sweeps, which is the fixed-iteration training mode.

    ``accelerate`` only matters for stabilized runs with a positive
    tolerance.  The target ``lam`` is then reached through a doubling
    schedule, each stage warm-started from the previous one, and the last
    stage is finished with Newton steps on the log-scalings.  Plain sweeps
    contract the slow modes by a factor ``1 - O(exp(-lam * gap))`` per
    iteration, so near-permutation optima at large ``lam`` would otherwise
    never balance their row marginals.
    """

    lam: float = 0.01
    max_iterations: int = 20
    convergence_tolerance: float = 0.0
    stabilized: bool = False
    accelerate: bool = True

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise InputError(f"lambda must be positive and finite, got {self.lam!r}")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")
        if not self.convergence_tolerance >= 0:
            raise InputError("convergence_tolerance must be >= 0")


@dataclass(frozen=True)
class TransportPlan:
    """A weight matrix over batch pairs.

    ``is_coupling`` is False for the ablation weightings, whose marginals are
    not constrained; the residual fields are then informational only.
    """

    t: np.ndarray
    converged_iterations: int = 0
    marginal_residual: float = 0.0
    column_residual: float = 0.0
    is_coupling: bool = True

    @property
    def shape(self) -> tuple[int, int]:
        return self.t.shape


def _as_matrix(t) -> np.ndarray:
    if isinstance(t, TransportPlan):
        return t.t
    return np.asarray(t, dtype=np.float64)


def _check_cost(m: np.ndarray, marginals: Marginals) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise InputError(f"cost matrix must be 2-D, got shape {m.shape}")
    if m.shape != (marginals.r.size, marginals.c.size):
        raise InputError(
            f"cost shape {m.shape} does not match marginals "
            f"({marginals.r.size}, {marginals.c.size})"
        )
    if not np.all(np.isfinite(m)):
        raise InputError("cost matrix has non-finite entries")
    if np.any(m < 0):
        raise InputError("cost matrix has negative entries")
    return m


def _finish(t, r, c, iterations) -> TransportPlan:
    return TransportPlan(
        t=t,
        converged_iterations=iterations,
        marginal_residual=float(np.max(np.abs(t.sum(axis=1) - r))),
        column_residual=float(np.max(np.abs(t.sum(axis=0) - c))),
    )


def _sinkhorn_direct(m, r, c, cfg: SinkhornConfig) -> TransportPlan:
    k = np.exp(-cfg.lam * m)
    if np.any(k.sum(axis=1) == 0) or np.any(k.sum(axis=0) == 0):
        raise SolverError(
            "exp(-lambda*M) underflowed to an all-zero row or column; "
            "rerun with stabilized=True"
        )
    u = np.ones_like(r)
    v = np.ones_like(c)
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        u_new = r / (k @ v)
        v_new = c / (k.T @ u_new)
        if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
            raise SolverError(
                "scaling vectors overflowed in direct mode; rerun with stabilized=True"
            )
        change = max(np.max(np.abs(u_new - u)), np.max(np.abs(v_new - v)))
        u, v = u_new, v_new
        if change < cfg.convergence_tolerance:
            break
    t = u[:, None] * k * v[None, :]
    return _finish(t, r, c, it)


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    mx = np.max(x, axis=axis, keepdims=True)
    return np.log(np.sum(np.exp(x - mx), axis=axis)) + np.squeeze(mx, axis=axis)


def _log_sweeps(log_k, log_r, log_c, f, g, max_iterations, tol):
    it = 0
    for it in range(1, max_iterations + 1):
        f_new = log_r - _lse(log_k + g[None, :], axis=1)
        g_new = log_c - _lse(log_k + f_new[:, None], axis=0)
        change = max(np.max(np.abs(f_new - f)), np.max(np.abs(g_new - g)))
        f, g = f_new, g_new
        if change < tol:
            break
    return f, g, it


def _anneal_schedule(lam: float) -> list[float]:
    stages = [lam]
    while stages[-1] > 1.0:
        stages.append(stages[-1] / 2.0)
    return stages[::-1]


def _dual(log_k, r, c, f, g):
    t = np.exp(f[:, None] + log_k + g[None, :])
    return float(r @ f + c @ g - t.sum()), t


def _newton_polish(log_k, r, c, f, g, tol, max_steps=100):
    """Newton ascent on the concave entropic dual in (f, g).

    The Hessian is singular along (1, -1); lstsq picks the minimum-norm
    step, which leaves that gauge direction untouched.
    """
    n, m = log_k.shape
    obj, t = _dual(log_k, r, c, f, g)
    steps = 0
    for steps in range(1, max_steps + 1):
        row, col = t.sum(axis=1), t.sum(axis=0)
        grad = np.concatenate([r - row, c - col])
        if np.max(np.abs(grad)) <= tol:
            break
        hess = np.block([[np.diag(row), t], [t.T, np.diag(col)]])
        step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        slope = float(grad @ step)
        if not slope > 0:
            break
        alpha = 1.0
        while alpha > 1e-10:
            f_try = f + alpha * step[:n]
            g_try = g + alpha * step[n:]
            obj_try, t_try = _dual(log_k, r, c, f_try, g_try)
            if obj_try >= obj + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            break
        f, g, obj, t = f_try, g_try, obj_try, t_try
    return f, g, steps


def _sinkhorn_log(m, r, c, cfg: SinkhornConfig) -> TransportPlan:
    # f = log u, g = log v; convergence is measured on the log-scalings.
    log_r = np.log(r)
    log_c = np.log(c)
    f = np.zeros_like(r)
    g = np.zeros_like(c)
    tol = cfg.convergence_tolerance
    accelerate = cfg.accelerate and tol > 0
    stages = _anneal_schedule(cfg.lam) if accelerate else [cfg.lam]
    total = 0
    prev_lam = None
    for lam in stages:
        if prev_lam is not None:
            # log-scalings are lam times the dual potentials
            f *= lam / prev_lam
            g *= lam / prev_lam
        budget = min(cfg.max_iterations, 200) if accelerate else cfg.max_iterations
        f, g, it = _log_sweeps(-lam * m, log_r, log_c, f, g, budget, tol)
        total += it
        prev_lam = lam
    log_k = -cfg.lam * m
    if accelerate:
        f, g, steps = _newton_polish(log_k, r, c, f, g, tol)
        total += steps
        # close on a column scaling so column sums are exact
        g = log_c - _lse(log_k + f[:, None], axis=0)
    t = np.exp(f[:, None] + log_k + g[None, :])
    return _finish(t, r, c, total)


def sinkhorn(m, marginals: Marginals, cfg: SinkhornConfig | None = None) -> TransportPlan:
    """Entropy-regularized transport plan for cost ``m``.

    Args:
        m: Non-negative ``(n, n)`` cost matrix.
        marginals: Row and column masses.
        cfg: Solver settings; defaults to 20 fixed sweeps at ``lam=0.01``.

    Returns:
        The plan ``diag(u) K diag(v)``.  The last update is a column scaling,
        so column sums match ``c`` to rounding; ``marginal_residual`` is the
        max-abs row-sum error.

    Raises:
        InputError: ``m`` is non-finite, negative or mis-shaped.
        SolverError: direct-mode underflow or overflow.
    """
    cfg = cfg or SinkhornConfig()
    m = _check_cost(m, marginals)
    if cfg.stabilized:
        return _sinkhorn_log(m, marginals.r, marginals.c, cfg)
    return _sinkhorn_direct(m, marginals.r, marginals.c, cfg)


def exact_ot(m, marginals: Marginals) -> tuple[TransportPlan, float]:
    """Exact transport by enumerating permutation matrices.

    With uniform marginals the vertices of the transport polytope are the
    permutation matrices scaled by ``1/n`` (Birkhoff), so the minimum over
    them is the LP optimum.  Ties go to the lexicographically smallest
    permutation.
    """
    m = _check_cost(m, marginals)
    n = m.shape[0]
    if m.shape[0] != m.shape[1] or not marginals.is_uniform:
        raise UnsupportedOracleError("exact_ot only supports uniform square problems")
    if n > EXACT_OT_MAX_N:
        raise UnsupportedOracleError(f"exact_ot supports n <= {EXACT_OT_MAX_N}, got {n}")

    rows = np.arange(n)
    best_perm = None
    best_sum = math.inf
    for perm in itertools.permutations(range(n)):
        s = math.fsum(m[rows, perm])
        if s < best_sum:
            best_sum = s
            best_perm = perm
    t = np.zeros((n, n))
    t[rows, best_perm] = 1.0 / n
    return _finish(t, marginals.r, marginals.c, 0), best_sum / n


def transport_cost(t, m) -> float:
    """Frobenius product ``<T, M>``."""
    t = _as_matrix(t)
    m = np.asarray(m, dtype=np.float64)
    if t.shape != m.shape:
        raise InputError(f"plan shape {t.shape} does not match cost shape {m.shape}")
    # np.sum on a contiguous ravel is a fixed-order pairwise reduction
    return float(np.sum(np.ascontiguousarray(t * m).ravel()))


def plan_entropy(t) -> float:
    """``-sum T log T`` with ``0 log 0 = 0``."""
    t = _as_matrix(t)
    if np.any(t < 0):
        raise InputError("plan has negative entries")
    return float(-np.sum(xlogy(t, t)))
