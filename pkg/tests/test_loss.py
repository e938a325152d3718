import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from batchot.errors import InputError
from batchot.gradcheck import central_difference, check_contrastive, check_otl_gradient, check_triplet, relative_error
from batchot.ground import GroundParams, ground_matrices
from batchot.loss import (
    Weighting,
    WeightingMode,
    contrastive_loss,
    make_weights,
    otl_forward,
    otl_gradient,
    surrogate_value,
    triplet_loss,
)
from batchot.ot import SinkhornConfig, TransportPlan

UNIFORM = WeightingMode(Weighting.UNIFORM_MEAN)


def _instance(seed, n=4, dim=3, classes=2):
    rng = np.random.default_rng(seed)
    f1, f2 = rng.uniform(0, 1, (n, dim)), rng.uniform(0, 1, (n, dim))
    l1, l2 = rng.integers(0, classes, n), rng.integers(0, classes, n)
    return f1, f2, ground_matrices(f1, f2, l1, l2, GroundParams(10.0, 1.0)), rng


# --- otl_forward ----------------------------------------------------------------


def test_forward_all_same_class_identical():
    f = np.full((3, 2), 0.4)
    g = ground_matrices(f, f, [1, 1, 1], [1, 1, 1])
    v = otl_forward(g, make_weights(UNIFORM, g))
    assert v.positive_part == pytest.approx(0.5, abs=1e-15)
    assert v.negative_part == 0.0 and v.surrogate == 0.0


def test_forward_all_different_class_far_apart():
    f1 = np.zeros((2, 2))
    f2 = np.array([[1.0, 1.0], [2.0, 0.0]])
    g = ground_matrices(f1, f2, [0, 0], [1, 1])
    assert np.all(g.d >= g.epsilon)
    v = otl_forward(g, make_weights(UNIFORM, g))
    assert v.negative_part == pytest.approx(0.5, abs=1e-15)
    assert v.positive_part == 0.0 and v.surrogate == 0.0


def test_forward_matches_scalar_loop():
    _, _, g, rng = _instance(1)
    t = rng.random((4, 4))
    pos = neg = sur = 0.0
    for i in range(4):
        for j in range(4):
            y = g.y[i, j]
            pos += 0.5 * y * t[i, j] * np.exp(-10 * g.d[i, j])
            neg += 0.5 * (1 - y) * t[i, j] * np.exp(-10 * max(0.0, 1.0 - g.d[i, j]))
            sur += t[i, j] * (y * 0.5 * g.d[i, j] + (1 - y) * 0.5 * max(0.0, 1.0 - g.d[i, j]))
    v = otl_forward(g, t)
    assert v.positive_part == pytest.approx(pos, abs=1e-12)
    assert v.negative_part == pytest.approx(neg, abs=1e-12)
    assert v.surrogate == pytest.approx(sur, abs=1e-12)
    assert abs(v.total - (v.positive_part + v.negative_part)) <= 1e-12
    assert v.surrogate >= 0


def test_forward_shape_mismatch():
    _, _, g, _ = _instance(0)
    with pytest.raises(InputError):
        otl_forward(g, np.ones((3, 3)))


# --- otl_gradient ---------------------------------------------------------------


def test_gradient_zero_for_identical_same_class():
    f = np.full((3, 2), 0.7)
    g = ground_matrices(f, f, [0, 0, 0], [0, 0, 0])
    g1, g2 = otl_gradient(f, f, g, make_weights(UNIFORM, g))
    assert not g1.any() and not g2.any()


def test_gradient_zero_for_far_negatives():
    f1 = np.zeros((2, 2))
    f2 = np.array([[1.0, 1.0], [2.0, 0.0]])
    g = ground_matrices(f1, f2, [0, 0], [1, 1])
    g1, g2 = otl_gradient(f1, f2, g, make_weights(UNIFORM, g))
    assert not g1.any() and not g2.any()


def test_gradient_formula_scalar_loop():
    f1, f2, g, rng = _instance(2)
    t = rng.random((4, 4))
    g1, g2 = otl_gradient(f1, f2, g, t)
    ref1, ref2 = np.zeros_like(f1), np.zeros_like(f2)
    for i in range(4):
        for j in range(4):
            w = t[i, j] * (g.y[i, j] - (1 - g.y[i, j]) * g.delta[i, j])
            ref1[i] += w * (f1[i] - f2[j])
            ref2[j] -= w * (f1[i] - f2[j])
    np.testing.assert_allclose(g1, ref1, rtol=0, atol=1e-14)
    np.testing.assert_allclose(g2, ref2, rtol=0, atol=1e-14)


def test_gradient_matches_finite_differences_100_instances():
    result = check_otl_gradient(seed=11, instances=100)
    assert result.max_rel_error < 1e-5, result.line()


@given(seed=st.integers(0, 2**31))
def test_gradient_swap_antisymmetry(seed):
    f1, f2, g, rng = _instance(seed)
    t = rng.random((4, 4))
    labels1 = rng.integers(0, 2, 4)
    labels2 = rng.integers(0, 2, 4)
    g = ground_matrices(f1, f2, labels1, labels2)
    swapped = ground_matrices(f2, f1, labels2, labels1)
    np.testing.assert_array_equal(swapped.y, g.y.T)
    np.testing.assert_array_equal(swapped.delta, g.delta.T)
    a1, a2 = otl_gradient(f1, f2, g, t)
    b1, b2 = otl_gradient(f2, f1, swapped, t.T)
    np.testing.assert_allclose(b1, a2, rtol=0, atol=1e-14)
    np.testing.assert_allclose(b2, a1, rtol=0, atol=1e-14)


@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_linearity_in_plan(seed, scale):
    f1, f2, g, rng = _instance(seed)
    t = rng.random((4, 4))
    v, w = otl_forward(g, t), otl_forward(g, scale * t)
    assert w.positive_part == pytest.approx(scale * v.positive_part, rel=1e-12, abs=1e-300)
    assert w.negative_part == pytest.approx(scale * v.negative_part, rel=1e-12, abs=1e-300)
    assert w.surrogate == pytest.approx(scale * v.surrogate, rel=1e-12, abs=1e-300)
    a1, a2 = otl_gradient(f1, f2, g, t)
    b1, b2 = otl_gradient(f1, f2, g, scale * t)
    np.testing.assert_allclose(b1, scale * a1, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(b2, scale * a2, rtol=1e-12, atol=1e-300)


@given(seed=st.integers(0, 2**31), n=st.integers(1, 6))
def test_uniform_surrogate_is_half_mean_contrastive(seed, n):
    rng = np.random.default_rng(seed)
    f1, f2 = rng.uniform(0, 1, (n, 2)), rng.uniform(0, 1, (n, 2))
    l1, l2 = rng.integers(0, 2, n), rng.integers(0, 2, n)
    g = ground_matrices(f1, f2, l1, l2)
    surrogate = otl_forward(g, make_weights(UNIFORM, g)).surrogate
    # every cross-batch pair fed through the contrastive objective
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mean_contrastive, _, _ = contrastive_loss(f1[i.ravel()], f2[j.ravel()], g.y.ravel(), 1.0)
    # the surrogate carries the same 1/2 factor as each part of the forward value
    assert surrogate == pytest.approx(0.5 * mean_contrastive, abs=1e-12)


# --- contrastive / triplet ------------------------------------------------------


def test_contrastive_examples():
    f = np.array([[0.2, 0.3]])
    loss, g1, g2 = contrastive_loss(f, f, [1.0], 1.0)
    assert loss == 0.0 and not g1.any() and not g2.any()
    loss, g1, g2 = contrastive_loss([[0.0, 0.0]], [[1.0, 1.0]], [0.0], 1.0)
    assert loss == 0.0 and not g1.any() and not g2.any()
    loss, _, _ = contrastive_loss([[0.0], [0.0]], [[0.5], [0.5]], [1.0, 0.0], 1.0)
    assert loss == pytest.approx((0.25 + 0.75) / 2)
    with pytest.raises(InputError):
        contrastive_loss(np.zeros((2, 2)), np.zeros((3, 2)), [1, 1], 1.0)


def test_contrastive_finite_differences():
    assert check_contrastive(seed=5, instances=50).max_rel_error < 1e-5


def test_triplet_examples():
    a = np.array([[0.1, 0.1]])
    loss, grads = triplet_loss(a, a, [[1.1, 0.1]], 1.0)
    assert loss == 0.0 and all(not g.any() for g in grads)
    loss, _ = triplet_loss(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((3, 2)), 0.7)
    assert loss == pytest.approx(0.7)
    # exactly on the kink: zero subgradient
    loss, grads = triplet_loss([[0.0]], [[0.0]], [[1.0]], 1.0)
    assert loss == 0.0 and all(not g.any() for g in grads)
    with pytest.raises(InputError):
        triplet_loss(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 3)), 1.0)


def test_triplet_finite_differences():
    assert check_triplet(seed=6, instances=50).max_rel_error < 1e-5


# --- make_weights ---------------------------------------------------------------


def test_uniform_mean_weights():
    _, _, g, _ = _instance(0, n=2)
    plan = make_weights(UNIFORM, g)
    np.testing.assert_array_equal(plan.t, np.full((2, 2), 0.25))
    assert not plan.is_coupling


def test_random_weights_reproducible_positive_normalized():
    _, _, g, _ = _instance(0, n=5)
    mode = WeightingMode("random", seed=42)
    a, b = make_weights(mode, g), make_weights(mode, g)
    np.testing.assert_array_equal(a.t, b.t)
    assert np.all(a.t > 0) and a.t.sum() == pytest.approx(1.0, abs=1e-15)
    assert not a.is_coupling
    c = make_weights(mode, g, rng=np.random.default_rng(1))
    assert not np.array_equal(a.t, c.t)


def test_optimal_weights_on_constant_ground_are_uniform():
    f = np.full((3, 2), 0.5)
    g = ground_matrices(f, f, [0, 0, 0], [0, 0, 0])
    assert np.all(g.m_star == 1.0)
    plan = make_weights(WeightingMode(), g, SinkhornConfig(lam=0.01))
    np.testing.assert_allclose(plan.t, 1 / 9, rtol=0, atol=1e-15)
    assert isinstance(plan, TransportPlan) and plan.is_coupling


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        WeightingMode("greedy")


def test_surrogate_value_agrees_with_forward():
    f1, f2, g, rng = _instance(3)
    t = rng.random((4, 4))
    assert surrogate_value(f1, f2, g.y, t, 1.0) == otl_forward(g, t).surrogate


def test_relative_error_helper():
    assert relative_error([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert relative_error([0.0], [0.0]) == 0.0
    assert relative_error([1.0], [1.1]) == pytest.approx(0.1 / 1.1)
    x = np.array([1.0, 2.0])
    np.testing.assert_allclose(central_difference(lambda: float(np.sum(x**2)), x), 2 * x, rtol=1e-9)
