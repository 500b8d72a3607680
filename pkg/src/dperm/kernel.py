"""Private kernel classification through random Fourier features.

For the Gaussian kernel ``k(x, x') = exp(-gamma ||x - x'||^2)``, draw
``omega ~ N(0, 2 gamma I)`` and ``psi ~ Uniform[-pi, pi]``; the features
``sqrt(2/D) cos(omega^T x + psi)`` have inner products concentrating on ``k``.
The map is drawn independently of the data and released with the weights.

The raw map can have norm up to sqrt(2), which breaks the ``||x|| <= 1``
precondition of the linear private trainers. ``rescale_half`` mode divides the
features by sqrt(2) so mapped vectors stay in the unit ball; inner products then
estimate ``k / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dperm.erm import Dataset, TrainedModel, train
from dperm.errors import PreconditionError
from dperm.losses import LossSpec
from dperm.rng import split_seed

NORM_MODES = ("rescale_half", "raw")
DEFAULT_FEATURES_D = 500


@dataclass(frozen=True, eq=False)
class RandomFeatureMap:
    frequencies: np.ndarray  # (D, d)
    phases: np.ndarray  # (D,)
    gamma: float
    norm_mode: str = "rescale_half"

    def __post_init__(self):
        W = np.array(self.frequencies, dtype=float)
        psi = np.array(self.phases, dtype=float).reshape(-1)
        if W.ndim != 2 or W.shape[0] != psi.size or W.shape[0] < 1:
            raise PreconditionError("frequencies must be (D, d) with one phase per row")
        if np.any(np.abs(psi) > math.pi):
            raise PreconditionError("phases must lie in [-pi, pi]")
        if self.norm_mode not in NORM_MODES:
            raise PreconditionError(f"norm_mode must be one of {NORM_MODES}")
        if not self.gamma > 0:
            raise PreconditionError("gamma must be positive")
        W.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "frequencies", W)
        object.__setattr__(self, "phases", psi)

    @property
    def dimension_D(self) -> int:
        return self.frequencies.shape[0]

    @property
    def input_dim_d(self) -> int:
        return self.frequencies.shape[1]

    @property
    def scale(self) -> float:
        s = math.sqrt(2.0 / self.dimension_D)
        return s / math.sqrt(2.0) if self.norm_mode == "rescale_half" else s

    def to_dict(self) -> dict:
        return {
            "D": self.dimension_D,
            "d": self.input_dim_d,
            "gamma": self.gamma,
            "norm_mode": self.norm_mode,
            "frequencies": self.frequencies.tolist(),
            "phases": self.phases.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomFeatureMap":
        W = np.array(d["frequencies"], dtype=float).reshape(d["D"], d["d"])
        return cls(W, np.array(d["phases"], dtype=float), d["gamma"], d["norm_mode"])

    def __eq__(self, other):
        if not isinstance(other, RandomFeatureMap):
            return NotImplemented
        return (
            self.gamma == other.gamma
            and self.norm_mode == other.norm_mode
            and np.array_equal(self.frequencies, other.frequencies)
            and np.array_equal(self.phases, other.phases)
        )


def sample_gaussian_features(d: int, D: int, gamma: float, rng, norm_mode: str = "rescale_half") -> RandomFeatureMap:
    """Draws ``D`` frequency/phase pairs for the Gaussian kernel of width ``gamma``."""
    if int(d) != d or int(D) != D or d < 1 or D < 1:
        raise PreconditionError(f"d and D must be positive integers, got d={d!r}, D={D!r}")
    if not (gamma > 0 and math.isfinite(gamma)):
        raise PreconditionError(f"gamma must be positive, got {gamma!r}")
    gen, _ = split_seed(rng)
    W = gen.standard_normal((int(D), int(d))) * math.sqrt(2.0 * gamma)
    psi = gen.uniform(-math.pi, math.pi, size=int(D))
    return RandomFeatureMap(W, psi, float(gamma), norm_mode)


def apply_feature_map(fmap: RandomFeatureMap, x) -> np.ndarray:
    """Maps one vector (shape ``(d,)``) or a batch (shape ``(n, d)``) to R^D."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != fmap.input_dim_d:
        raise PreconditionError(f"input dimension {x.shape[-1]} != map input dimension {fmap.input_dim_d}")
    return fmap.scale * np.cos(x @ fmap.frequencies.T + fmap.phases)


def gaussian_kernel(x, x2, gamma: float) -> float:
    diff = np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)
    return float(np.exp(-gamma * (diff @ diff)))


def map_dataset(fmap: RandomFeatureMap, data: Dataset) -> Dataset:
    return Dataset(apply_feature_map(fmap, data.features), data.labels, fmap.dimension_D)


def train_kernel_private(
    data: Dataset,
    loss: LossSpec,
    lam: float,
    epsilon_p: Optional[float],
    D: int,
    gamma: float,
    method: str,
    rng,
    *,
    norm_mode: str = "rescale_half",
    **solver_kw,
) -> TrainedModel:
    """Samples a feature map, maps the data, and runs a linear trainer on it.

    ``method`` is ``output`` or ``objective``; ``nonprivate`` is accepted as a
    baseline. The returned model carries the map so it can score raw inputs.
    """
    if method not in ("output", "objective", "nonprivate"):
        raise PreconditionError(f"unknown method {method!r}")
    gen, seed = split_seed(rng)
    fmap = sample_gaussian_features(data.dimension_d, D, gamma, gen, norm_mode)
    mapped = map_dataset(fmap, data)
    if method == "nonprivate":
        model = train("nonprivate", mapped, loss, lam, **solver_kw)
    else:
        model = train(method, mapped, loss, lam, epsilon_p, gen, **solver_kw)
    model.feature_map = fmap
    model.seed = seed
    return model
