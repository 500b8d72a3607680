"""Sampling from the isotropic density proportional to exp(-beta * ||b||).

The norm of such a vector is Gamma(d, 1/beta) distributed and its direction is
uniform on the sphere, so we draw the two independently. The Gamma draw is the
exact integer-shape construction: a sum of ``d`` exponentials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dperm.errors import PreconditionError
from dperm.rng import as_generator


@dataclass(frozen=True)
class NoiseParams:
    dimension_d: int
    beta: float

    def __post_init__(self):
        if int(self.dimension_d) != self.dimension_d or self.dimension_d < 1:
            raise PreconditionError(f"dimension must be a positive integer, got {self.dimension_d!r}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise PreconditionError(f"beta must be positive and finite, got {self.beta!r}")


def _check_dim(d):
    if int(d) != d or d < 1:
        raise PreconditionError(f"dimension must be a positive integer, got {d!r}")
    return int(d)


def sample_direction(d: int, rng, size=None) -> np.ndarray:
    """Uniform direction on the unit sphere in R^d (normalized Gaussian)."""
    d = _check_dim(d)
    rng = as_generator(rng)
    shape = (d,) if size is None else (int(size), d)
    g = np.atleast_2d(rng.standard_normal(shape))
    norms = np.linalg.norm(g, axis=1)
    # An exactly-zero Gaussian vector has probability 0; redraw instead of dividing by 0.
    while np.any(norms == 0):
        bad = norms == 0
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1)
    out = g / norms[:, None]
    return out[0] if size is None else out


def sample_radius(d: int, theta: float, rng, size=None):
    """Gamma(d, theta) draw as a sum of ``d`` exponentials with mean ``theta``."""
    d = _check_dim(d)
    if not (theta > 0 and math.isfinite(theta)):
        raise PreconditionError(f"theta must be positive and finite, got {theta!r}")
    rng = as_generator(rng)
    if size is None:
        return float(rng.exponential(theta, size=d).sum())
    return rng.exponential(theta, size=(int(size), d)).sum(axis=1)


def sample_noise(params: NoiseParams, rng, size=None) -> np.ndarray:
    """Draws b with density proportional to exp(-beta ||b||).

    Args:
      params: dimension and inverse scale ``beta``.
      rng: seed or ``numpy.random.Generator``.
      size: optional number of independent draws; the result then has shape
        ``(size, d)``.
    """
    rng = as_generator(rng)
    radius = sample_radius(params.dimension_d, 1.0 / params.beta, rng, size=size)
    direction = sample_direction(params.dimension_d, rng, size=size)
    if size is None:
        return radius * direction
    return radius[:, None] * direction


def gamma_tail_bound(k: int, theta: float, delta: float) -> float:
    """Level below which a Gamma(k, theta) draw falls with probability >= 1 - delta."""
    return k * theta * math.log(k / delta)
