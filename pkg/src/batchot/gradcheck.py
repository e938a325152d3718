"""Central finite-difference checks for every hand-written gradient.

Each check draws a few random instances, compares the analytic gradient with
central differences (step ``1e-5``) and reports the worst relative error

    ||analytic - numeric|| / max(||analytic||, ||numeric||)

taken per gradient array.  Instances with a cell within ``HINGE_MARGIN`` of a
hinge kink are redrawn, because the loss is not differentiable there.

``perturb`` scales every analytic gradient by ``1 + perturb`` before the
comparison; it exists so tests can confirm that a wrong gradient is caught.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from batchot import embed
from batchot.ground import GroundParams, ground_matrices, pairwise_sqdist
from batchot.loss import contrastive_loss, otl_gradient, surrogate_value, triplet_loss
from batchot.ot import Marginals, SinkhornConfig, sinkhorn

__all__ = [
    "CheckResult",
    "central_difference",
    "check_contrastive",
    "check_embed_backward",
    "check_end_to_end",
    "check_otl_gradient",
    "check_triplet",
    "relative_error",
    "run_suite",
]

STEP = 1e-5
HINGE_MARGIN = 1e-3
LOSS_TOLERANCE = 1e-5
END_TO_END_TOLERANCE = 1e-4
END_TO_END_LAYERS = (4, 3, 2)
_MAX_REDRAWS = 1000


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    instances: int

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}  {self.name:<16} max rel err {self.max_rel_error:.3e}"
            f"  (tol {self.tolerance:.0e}, {self.instances} instances)"
        )


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def central_difference(fn: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Numeric gradient of ``fn()`` with respect to ``x``, perturbed in place."""
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for k in range(flat.size):
        keep = flat[k]
        flat[k] = keep + h
        up = fn()
        flat[k] = keep - h
        down = fn()
        flat[k] = keep
        out[k] = (up - down) / (2.0 * h)
    return grad


def _clear_of_hinge(d: np.ndarray, epsilon: float) -> bool:
    return bool(np.min(np.abs(epsilon - d)) >= HINGE_MARGIN)


def _redraw(draw, accept, rng):
    for _ in range(_MAX_REDRAWS):
        sample = draw(rng)
        if accept(sample):
            return sample
    raise RuntimeError("could not draw an instance away from the hinge boundary")


def check_otl_gradient(seed: int, instances: int = 5, perturb: float = 0.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    params = GroundParams()
    worst = 0.0
    for _ in range(instances):
        n, dim = int(rng.integers(2, 6)), int(rng.integers(1, 4))

        def draw(r):
            return r.uniform(0, 1, (n, dim)), r.uniform(0, 1, (n, dim)), r.integers(0, 2, n), r.integers(0, 2, n)

        f1, f2, l1, l2 = _redraw(draw, lambda s: _clear_of_hinge(pairwise_sqdist(s[0], s[1]), params.epsilon), rng)
        g = ground_matrices(f1, f2, l1, l2, params)
        t = sinkhorn(g.m_star, Marginals.uniform(n), SinkhornConfig(lam=10.0)).t
        g1, g2 = otl_gradient(f1, f2, g, t)
        value = lambda: surrogate_value(f1, f2, g.y, t, params.epsilon)  # noqa: E731
        worst = max(
            worst,
            relative_error(g1 * (1 + perturb), central_difference(value, f1)),
            relative_error(g2 * (1 + perturb), central_difference(value, f2)),
        )
    return CheckResult("otl_gradient", worst, LOSS_TOLERANCE, instances)


def check_contrastive(seed: int, instances: int = 5, perturb: float = 0.0, epsilon: float = 1.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n, dim = int(rng.integers(2, 6)), int(rng.integers(1, 4))

        def draw(r):
            return r.uniform(0, 1, (n, dim)), r.uniform(0, 1, (n, dim))

        f1, f2 = _redraw(draw, lambda s: _clear_of_hinge(np.sum((s[0] - s[1]) ** 2, axis=1), epsilon), rng)
        y = rng.integers(0, 2, n).astype(np.float64)
        _, g1, g2 = contrastive_loss(f1, f2, y, epsilon)
        value = lambda: contrastive_loss(f1, f2, y, epsilon)[0]  # noqa: E731
        worst = max(
            worst,
            relative_error(g1 * (1 + perturb), central_difference(value, f1)),
            relative_error(g2 * (1 + perturb), central_difference(value, f2)),
        )
    return CheckResult("contrastive_loss", worst, LOSS_TOLERANCE, instances)


def check_triplet(seed: int, instances: int = 5, perturb: float = 0.0, epsilon: float = 1.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n, dim = int(rng.integers(2, 6)), int(rng.integers(1, 4))

        def draw(r):
            return tuple(r.uniform(0, 1, (n, dim)) for _ in range(3))

        def margin(s):
            a, p, q = s
            return np.sum((a - p) ** 2, axis=1) - np.sum((a - q) ** 2, axis=1) + epsilon

        a, p, q = _redraw(draw, lambda s: bool(np.min(np.abs(margin(s))) >= HINGE_MARGIN), rng)
        _, grads = triplet_loss(a, p, q, epsilon)
        value = lambda: triplet_loss(a, p, q, epsilon)[0]  # noqa: E731
        for x, g in zip((a, p, q), grads):
            worst = max(worst, relative_error(g * (1 + perturb), central_difference(value, x)))
    return CheckResult("triplet_loss", worst, LOSS_TOLERANCE, instances)


def check_embed_backward(seed: int, instances: int = 5, perturb: float = 0.0) -> CheckResult:
    """Gradient of ``sum(forward(x) * upstream)`` for random nets and upstreams."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        sizes = [int(s) for s in rng.integers(1, 5, size=int(rng.integers(2, 5)))]
        net = embed.init(sizes, int(rng.integers(2**31)))
        for b in net.biases:
            b[:] = rng.normal(0, 0.5, b.shape)
        x = rng.normal(0, 1, (int(rng.integers(1, 5)), sizes[0]))
        upstream = rng.normal(0, 1, (x.shape[0], sizes[-1]))
        _, trace = embed.forward(net, x)
        grads = embed.backward(net, trace, upstream)
        value = lambda: float(np.sum(embed.forward(net, x)[0] * upstream))  # noqa: E731
        for param, g in zip(net.parameters(), [p for wb in zip(grads.weights, grads.biases) for p in wb]):
            worst = max(worst, relative_error(g * (1 + perturb), central_difference(value, param)))
    return CheckResult("embed.backward", worst, LOSS_TOLERANCE, instances)


def _end_to_end_instance(rng, n, params):
    net = embed.init(END_TO_END_LAYERS, int(rng.integers(2**31)))
    x1 = rng.normal(0, 1, (n, END_TO_END_LAYERS[0]))
    x2 = rng.normal(0, 1, (n, END_TO_END_LAYERS[0]))
    l1, l2 = rng.integers(0, 2, n), rng.integers(0, 2, n)
    e1, _ = embed.forward(net, x1)
    e2, _ = embed.forward(net, x2)
    return net, x1, x2, l1, l2, _clear_of_hinge(pairwise_sqdist(e1, e2), params.epsilon)


def check_end_to_end(seed: int, instances: int = 20, perturb: float = 0.0, n: int = 4) -> CheckResult:
    """Network parameters through ``otl_gradient`` and ``backward``, plan fixed."""
    rng = np.random.default_rng(seed)
    params = GroundParams()
    worst = 0.0
    for _ in range(instances):
        net, x1, x2, l1, l2, _ = _redraw(lambda r: _end_to_end_instance(r, n, params), lambda s: s[-1], rng)
        e1, tr1 = embed.forward(net, x1)
        e2, tr2 = embed.forward(net, x2)
        g = ground_matrices(e1, e2, l1, l2, params)
        t = sinkhorn(g.m_star, Marginals.uniform(n), SinkhornConfig(lam=10.0)).t
        ge1, ge2 = otl_gradient(e1, e2, g, t)
        grads = embed.backward(net, tr1, ge1) + embed.backward(net, tr2, ge2)

        def value():
            return surrogate_value(embed.forward(net, x1)[0], embed.forward(net, x2)[0], g.y, t, params.epsilon)

        analytic = [p for wb in zip(grads.weights, grads.biases) for p in wb]
        for param, grad in zip(net.parameters(), analytic):
            worst = max(worst, relative_error(grad * (1 + perturb), central_difference(value, param)))
    return CheckResult("end_to_end", worst, END_TO_END_TOLERANCE, instances)


def run_suite(seed: int, perturb: float = 0.0) -> list[CheckResult]:
    return [
        check_otl_gradient(seed, perturb=perturb),
        check_contrastive(seed, perturb=perturb),
        check_triplet(seed, perturb=perturb),
        check_embed_backward(seed, perturb=perturb),
        check_end_to_end(seed, instances=5, perturb=perturb),
    ]
