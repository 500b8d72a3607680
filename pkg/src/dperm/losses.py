"""Margin losses for linear classification with certified smoothness constants.

Each loss is a function of the margin ``z = y * f(x)``. All three kinds have
``|l'(z)| <= 1``; their curvature bounds ``c`` feed the objective-perturbation
slack computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from dperm.errors import PreconditionError

KINDS = ("logistic", "huber", "smoothed_hinge")
DEFAULT_H = 0.5


@dataclass(frozen=True)
class LossSpec:
    """A margin loss.

    Attributes:
      kind: one of ``logistic``, ``huber``, ``smoothed_hinge``.
      h: smoothing half-width for huber / smoothed_hinge; ``None`` for logistic.
    """

    kind: str = "logistic"
    h: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "logistic":
            if self.h is not None:
                raise PreconditionError("logistic loss takes no smoothing parameter h")
            return
        h = DEFAULT_H if self.h is None else float(self.h)
        if not (math.isfinite(h) and h > 0):
            raise PreconditionError(f"h must be positive, got {self.h!r}")
        object.__setattr__(self, "h", h)

    @property
    def derivative_bound(self) -> float:
        return 1.0

    @property
    def curvature_bound_c(self) -> float:
        if self.kind == "logistic":
            return 0.25
        if self.kind == "smoothed_hinge":
            return 3.0 / (4.0 * self.h)
        return 1.0 / (2.0 * self.h)

    @property
    def twice_differentiable(self) -> bool:
        # Huber has second-derivative jumps at z = 1 +/- h.
        return self.kind != "huber"

    # Vectorized evaluation; no finiteness checks (callers validate inputs).

    def value(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "logistic":
            return np.logaddexp(0.0, -z)
        h = self.h
        u = 1.0 - z
        if self.kind == "huber":
            mid = (1.0 + h - z) ** 2 / (4.0 * h)
        else:
            mid = -(u**4) / (16.0 * h**3) + 3.0 * u**2 / (8.0 * h) + u / 2.0 + 3.0 * h / 16.0
        return np.where(z > 1.0 + h, 0.0, np.where(z < 1.0 - h, u, mid))

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "logistic":
            return -expit(-z)
        h = self.h
        u = 1.0 - z
        if self.kind == "huber":
            mid = -(1.0 + h - z) / (2.0 * h)
        else:
            mid = u**3 / (4.0 * h**3) - 3.0 * u / (4.0 * h) - 0.5
        return np.where(z > 1.0 + h, 0.0, np.where(z < 1.0 - h, -1.0, mid))

    def second_deriv(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "logistic":
            return expit(z) * expit(-z)
        h = self.h
        if self.kind == "huber":
            mid = np.full_like(z, 1.0 / (2.0 * h))
        else:
            u = 1.0 - z
            mid = -3.0 * u**2 / (4.0 * h**3) + 3.0 / (4.0 * h)
        # Knots belong to the quadratic branch.
        return np.where(np.abs(1.0 - z) <= h, mid, 0.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        return cls(kind=d["kind"], h=d.get("h"))


def make_loss(kind: str, h: Optional[float] = None) -> LossSpec:
    """Builds a LossSpec from CLI/config strings; ``h`` is ignored for logistic."""
    kind = kind.replace("-", "_")
    if kind == "logistic":
        return LossSpec("logistic")
    return LossSpec(kind, DEFAULT_H if h is None else h)


def _finite(z) -> float:
    z = float(z)
    if not math.isfinite(z):
        raise PreconditionError(f"margin must be finite, got {z}")
    return z


def loss_value(loss: LossSpec, z: float) -> float:
    return float(loss.value(_finite(z)))


def loss_deriv(loss: LossSpec, z: float) -> float:
    return float(loss.deriv(_finite(z)))


def loss_second_deriv(loss: LossSpec, z: float) -> float:
    return float(loss.second_deriv(_finite(z)))
