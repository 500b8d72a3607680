import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from dperm.erm import Dataset, erm_objective
from dperm.errors import ConvergenceError, PreconditionError
from dperm.losses import LossSpec
from dperm.optimizer import Objective, check_gradient, minimize, solve


def quadratic(lam, b, n=1):
    b = np.asarray(b, dtype=float)
    return Objective(
        value_at=lambda w: 0.5 * lam * (w @ w) + b @ w / n,
        gradient_at=lambda w: lam * w + b / n,
        strong_convexity_lambda=lam,
        dimension=b.size,
    )


def random_logistic_problem(n, d, lam, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    X /= np.maximum(1.0, np.linalg.norm(X, axis=1, keepdims=True))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    return erm_objective(Dataset(X, y), LossSpec("logistic"), lam)


def test_quadratic_closed_form():
    w = minimize(quadratic(1.0, [1.0, 0.0]), grad_tol=1e-12)
    assert np.allclose(w, [-1.0, 0.0], atol=1e-12)


def test_scalar_logistic_fixed_point():
    # Single example x = 1, y = 1, lambda = 1: the minimizer solves f = 1 / (1 + e^f).
    oracle = optimize.brentq(lambda f: f - 1.0 / (1.0 + math.exp(f)), 0.0, 1.0, xtol=1e-15)
    assert oracle == pytest.approx(0.401058137541547, abs=1e-14)
    obj = erm_objective(Dataset([[1.0]], [1.0]), LossSpec("logistic"), 1.0)
    w = minimize(obj, grad_tol=1e-13)
    assert w[0] == pytest.approx(oracle, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_below_tolerance_20d(seed):
    obj = random_logistic_problem(200, 20, 0.01, seed)
    res = solve(obj, grad_tol=1e-10)
    assert np.linalg.norm(obj.gradient_at(res.x)) <= 1e-10
    assert res.grad_norm <= 1e-10


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(1e-3, 10), b=st.lists(st.floats(-5, 5), min_size=1, max_size=6), tol=st.sampled_from([1e-6, 1e-9]))
def test_closed_form_within_tol_over_lambda(lam, b, tol):
    obj = quadratic(lam, b)
    w = minimize(obj, grad_tol=tol)
    assert np.linalg.norm(w - (-np.asarray(b) / lam)) <= tol / lam + 1e-15


def test_check_gradient_logistic_and_quadratic():
    obj = random_logistic_problem(50, 5, 0.1, 1)
    assert check_gradient(obj, np.random.default_rng(2).standard_normal(5)) < 1e-5
    assert check_gradient(quadratic(2.0, [1.0, -3.0, 0.5]), np.array([0.3, 0.1, -2.0])) < 1e-9


def test_check_gradient_catches_corruption():
    good = random_logistic_problem(50, 5, 0.1, 1)

    def bad_grad(w):
        g = good.gradient_at(w).copy()
        g[2] += 0.1
        return g

    bad = Objective(good.value_at, bad_grad, good.strong_convexity_lambda, 5)
    assert check_gradient(bad, np.zeros(5)) >= 0.09


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.floats(0.01, 0.99))
def test_strong_convexity_inequality(seed, alpha):
    lam = 0.3
    obj = random_logistic_problem(20, 4, lam, 7)
    rng = np.random.default_rng(seed)
    f, g = rng.standard_normal(4) * 3, rng.standard_normal(4) * 3
    lhs = obj.value_at(alpha * f + (1 - alpha) * g)
    rhs = alpha * obj.value_at(f) + (1 - alpha) * obj.value_at(g) - 0.5 * lam * alpha * (1 - alpha) * (f - g) @ (f - g)
    assert lhs <= rhs + 1e-9


def test_deterministic_output():
    obj = random_logistic_problem(100, 8, 0.05, 3)
    assert np.array_equal(minimize(obj), minimize(obj))


def test_unaccelerated_also_converges():
    obj = random_logistic_problem(100, 8, 0.05, 3)
    a = solve(obj, grad_tol=1e-10, accelerate=False)
    b = solve(obj, grad_tol=1e-10)
    assert np.linalg.norm(a.x - b.x) <= 2e-10 / 0.05


def test_nonconvergence_reports_gradient():
    obj = random_logistic_problem(100, 8, 1e-4, 3)
    with pytest.raises(ConvergenceError) as info:
        solve(obj, grad_tol=1e-14, max_iters=3)
    assert info.value.grad_norm > 1e-14
    assert info.value.iterations == 3


def test_nan_aborts():
    obj = Objective(lambda w: float("nan"), lambda w: w, 1.0, 2)
    with pytest.raises(FloatingPointError):
        minimize(obj)


def test_invalid_objective_rejected():
    with pytest.raises(PreconditionError):
        quadratic(0.0, [1.0])
