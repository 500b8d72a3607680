"""Deterministic first-order minimizer for smooth, strongly convex objectives.

Gradient descent with a backtracking (Armijo) estimate of the local Lipschitz
constant, optionally accelerated with Nesterov momentum and gradient-based
restarts. Iteration starts at the zero vector and stops once the gradient norm
drops below ``grad_tol``; by strong convexity the returned point is then within
``grad_tol / lambda`` of the exact minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from dperm.errors import ConvergenceError, PreconditionError

DEFAULT_REL_GRAD_TOL = 1e-10
DEFAULT_MAX_ITERS = 100_000

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Objective:
    """A smooth objective with its analytic gradient.

    ``value_and_gradient`` is an optional fused evaluator; when absent the two
    separate callables are used.
    """

    value_at: Callable[[np.ndarray], float]
    gradient_at: Callable[[np.ndarray], np.ndarray]
    strong_convexity_lambda: float
    dimension: int
    value_and_gradient: Optional[Callable[[np.ndarray], tuple]] = None

    def __post_init__(self):
        if not self.strong_convexity_lambda > 0:
            raise PreconditionError("strong_convexity_lambda must be positive")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise PreconditionError("dimension must be a positive integer")

    def evaluate(self, w):
        if self.value_and_gradient is not None:
            f, g = self.value_and_gradient(w)
        else:
            f, g = self.value_at(w), self.gradient_at(w)
        return float(f), np.asarray(g, dtype=float)


@dataclass(frozen=True)
class SolverResult:
    x: np.ndarray
    grad_norm: float
    grad_tol: float
    iterations: int
    evaluations: int


def default_grad_tol(grad_norm_at_zero: float) -> float:
    return DEFAULT_REL_GRAD_TOL * max(1.0, grad_norm_at_zero)


def _checked_sq_norm(f, g, iteration) -> float:
    # Any NaN/inf component of g propagates into g @ g.
    gg = float(g @ g)
    if not (math.isfinite(f) and math.isfinite(gg)):
        raise FloatingPointError(f"non-finite objective or gradient at iteration {iteration}")
    return gg


def solve(
    obj: Objective,
    grad_tol: Optional[float] = None,
    max_iters: int = DEFAULT_MAX_ITERS,
    accelerate: bool = True,
) -> SolverResult:
    """Minimizes ``obj`` from the origin.

    Args:
      obj: objective with exact gradient.
      grad_tol: absolute gradient-norm tolerance. Defaults to
        ``1e-10 * max(1, ||grad at 0||)``.
      max_iters: iteration cap.
      accelerate: use Nesterov momentum with gradient restarts.

    Returns:
      A ``SolverResult`` whose ``x`` satisfies ``||grad(x)|| <= grad_tol``.

    Raises:
      ConvergenceError: tolerance not reached within ``max_iters``.
      FloatingPointError: NaN or inf in the objective or gradient.
    """
    if grad_tol is not None and not grad_tol > 0:
        raise PreconditionError(f"grad_tol must be positive, got {grad_tol!r}")
    if max_iters < 1:
        raise PreconditionError("max_iters must be at least 1")

    x = np.zeros(obj.dimension)
    f, g = obj.evaluate(x)
    evals = 1
    gnorm = math.sqrt(_checked_sq_norm(f, g, 0))
    tol = default_grad_tol(gnorm) if grad_tol is None else float(grad_tol)
    if gnorm <= tol:
        return SolverResult(x, gnorm, tol, 0, evals)

    mu = obj.strong_convexity_lambda
    lip = max(1.0, mu)
    y, fy, gy, gg = x, f, g, gnorm * gnorm
    t = 1.0
    for it in range(1, max_iters + 1):
        while True:
            step = 1.0 / lip
            x_new = y - step * gy
            f_new, g_new = obj.evaluate(x_new)
            evals += 1
            gg_new = _checked_sq_norm(f_new, g_new, it)
            expected = 0.5 * step * gg
            if f_new <= fy - expected:
                break
            # Below the roundoff floor of f, test the Lipschitz estimate on gradients instead.
            if expected <= 64 * _EPS * max(1.0, abs(fy)):
                if np.linalg.norm(g_new - gy) <= lip * np.linalg.norm(x_new - y):
                    break
            lip *= 2.0
            if lip > 1e300:
                raise ConvergenceError("line search failed", x, gnorm, it)

        gnorm = math.sqrt(gg_new)
        if gnorm <= tol:
            return SolverResult(x_new, gnorm, tol, it, evals)

        if accelerate:
            if float(gy @ (x_new - x)) > 0:
                t = 1.0
                y, fy, gy, gg = x_new, f_new, g_new, gg_new
            else:
                t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
                momentum = (t - 1.0) / t_next
                t = t_next
                if momentum == 0.0:
                    y, fy, gy, gg = x_new, f_new, g_new, gg_new
                else:
                    y = x_new + momentum * (x_new - x)
                    fy, gy = obj.evaluate(y)
                    evals += 1
                    gg = _checked_sq_norm(fy, gy, it)
        else:
            y, fy, gy, gg = x_new, f_new, g_new, gg_new
        x = x_new
        lip = max(0.9 * lip, mu)

    raise ConvergenceError(
        f"gradient norm {gnorm:.3e} above tolerance {tol:.3e} after {max_iters} iterations",
        x, gnorm, max_iters,
    )


def minimize(
    obj: Objective,
    grad_tol: Optional[float] = None,
    max_iters: int = DEFAULT_MAX_ITERS,
    accelerate: bool = True,
) -> np.ndarray:
    """Returns the approximate minimizer; see ``solve``."""
    return solve(obj, grad_tol, max_iters, accelerate).x


def check_gradient(obj: Objective, point, step: float = 1e-6) -> float:
    """Max absolute difference between the analytic and central-difference gradient."""
    point = np.asarray(point, dtype=float)
    analytic = np.asarray(obj.gradient_at(point), dtype=float)
    worst = 0.0
    for i in range(point.size):
        e = np.zeros_like(point)
        e[i] = step
        fd = (obj.value_at(point + e) - obj.value_at(point - e)) / (2 * step)
        worst = max(worst, abs(fd - analytic[i]))
    return worst
