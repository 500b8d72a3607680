"""Regularized ERM for linear classifiers, with and without differential privacy.

The objective is

    J(f, D) = (1/n) sum_i loss(y_i f^T x_i) + (lambda / 2) ||f||^2

Output perturbation adds noise with density ~ exp(-beta ||b||),
``beta = n lambda eps / 2``, to the exact minimizer. Objective perturbation
instead minimizes ``J + b^T f / n + (Delta / 2) ||f||^2`` with ``beta = eps' / 2``,
where ``eps'`` and ``Delta`` come from ``compute_slack``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional

import numpy as np

from dperm.errors import PreconditionError
from dperm.losses import LossSpec
from dperm.noise import NoiseParams, sample_noise
from dperm.optimizer import DEFAULT_MAX_ITERS, Objective, solve
from dperm.rng import split_seed

NORM_SLACK = 1e-12
METHODS = ("nonprivate", "output", "objective")
HUBER_CAVEAT = "measure-zero differentiability caveat"
MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: float


class Dataset:
    """Labeled feature vectors with ``||x|| <= 1`` and labels in {-1, +1}.

    Stored column-wise as an ``(n, d)`` feature matrix and a label vector; both
    are read-only.
    """

    def __init__(self, features, labels, dimension: Optional[int] = None):
        X = np.array(features, dtype=float)
        y = np.array(labels, dtype=float).reshape(-1)
        if X.ndim == 1 and X.size == 0:
            if dimension is None:
                raise PreconditionError("empty dataset needs an explicit dimension")
            X = X.reshape(0, dimension)
        if X.ndim != 2:
            raise PreconditionError(f"features must be a 2-D array, got shape {X.shape}")
        if dimension is not None and X.shape[1] != dimension:
            raise PreconditionError(f"features have dimension {X.shape[1]}, expected {dimension}")
        if X.shape[1] < 1:
            raise PreconditionError("dimension must be at least 1")
        if X.shape[0] != y.shape[0]:
            raise PreconditionError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise PreconditionError("features must be finite")
        bad = np.flatnonzero((y != 1.0) & (y != -1.0))
        if bad.size:
            raise PreconditionError(f"labels must be -1 or +1; row {bad[0]} has {y[bad[0]]}")
        norms = np.linalg.norm(X, axis=1)
        over = np.flatnonzero(norms > 1.0 + NORM_SLACK)
        if over.size:
            raise PreconditionError(
                f"row {over[0]} has norm {norms[over[0]]:.6g} > 1; rescale during preprocessing"
            )
        X.setflags(write=False)
        y.setflags(write=False)
        self._X = X
        self._y = y

    @classmethod
    def from_examples(cls, examples, dimension: Optional[int] = None) -> "Dataset":
        examples = list(examples)
        if not examples:
            return cls(np.zeros((0, dimension or 0)), [], dimension)
        return cls([e.features for e in examples], [e.label for e in examples], dimension)

    @property
    def features(self) -> np.ndarray:
        return self._X

    @property
    def labels(self) -> np.ndarray:
        return self._y

    @property
    def n(self) -> int:
        return self._X.shape[0]

    @property
    def dimension_d(self) -> int:
        return self._X.shape[1]

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Example]:
        for x, y in zip(self._X, self._y):
            yield Example(x, float(y))

    def __getitem__(self, i) -> Example:
        return Example(self._X[i], float(self._y[i]))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self._X[idx], self._y[idx], self.dimension_d)

    def replace(self, index: int, example: Example) -> "Dataset":
        """Copy with one entry swapped (a neighboring dataset)."""
        X = self._X.copy()
        y = self._y.copy()
        X[index] = example.features
        y[index] = example.label
        return Dataset(X, y, self.dimension_d)

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(
            np.vstack([self._X, other.features]),
            np.concatenate([self._y, other.labels]),
            self.dimension_d,
        )

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.dimension_d})"


@dataclass(frozen=True)
class PrivacyParams:
    epsilon_p: float
    derived_beta: float
    epsilon_p_prime: Optional[float] = None
    delta_reg: float = 0.0

    def to_dict(self) -> dict:
        return {
            "epsilon_p": self.epsilon_p,
            "derived_beta": self.derived_beta,
            "epsilon_p_prime": self.epsilon_p_prime,
            "delta_reg": self.delta_reg,
        }


@dataclass
class TrainedModel:
    """Weights plus the provenance needed to reproduce them."""

    weights: np.ndarray
    method: str
    loss: LossSpec
    lam: float
    epsilon_p: Optional[float] = None
    seed: Optional[int] = None
    solver_tol: float = float("nan")
    feature_map: Any = None  # RandomFeatureMap, kept untyped to avoid an import cycle
    privacy: Optional[PrivacyParams] = None
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.method not in METHODS:
            raise PreconditionError(f"unknown method {self.method!r}")
        if not np.all(np.isfinite(self.weights)):
            raise PreconditionError("weights must be finite")

    @property
    def input_dim(self) -> int:
        if self.feature_map is not None:
            return self.feature_map.input_dim_d
        return self.weights.size

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "method": self.method,
            "loss": self.loss.to_dict(),
            "lambda": self.lam,
            "epsilon_p": self.epsilon_p,
            "seed": self.seed,
            "solver_tol": self.solver_tol,
            "weights": self.weights.tolist(),
            "feature_map": None if self.feature_map is None else self.feature_map.to_dict(),
            "privacy": None if self.privacy is None else self.privacy.to_dict(),
            "notes": list(self.notes),
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        fmap = None
        if d.get("feature_map") is not None:
            from dperm.kernel import RandomFeatureMap

            fmap = RandomFeatureMap.from_dict(d["feature_map"])
        priv = d.get("privacy")
        return cls(
            weights=np.array(d["weights"], dtype=float),
            method=d["method"],
            loss=LossSpec.from_dict(d["loss"]),
            lam=d["lambda"],
            epsilon_p=d.get("epsilon_p"),
            seed=d.get("seed"),
            solver_tol=d.get("solver_tol", float("nan")),
            feature_map=fmap,
            privacy=None if priv is None else PrivacyParams(**priv),
            notes=list(d.get("notes", [])),
            extra=dict(d.get("extra", {})),
        )

    def to_json(self) -> str:
        # float repr is shortest-round-trip, so the document reloads bit-exactly
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _check_training_inputs(data: Dataset, lam: float, epsilon_p: Optional[float] = None):
    if data.n == 0:
        raise PreconditionError("cannot train on an empty dataset")
    if not (lam > 0 and math.isfinite(lam)):
        raise PreconditionError(f"lambda must be positive, got {lam!r}")
    if epsilon_p is not None and not (epsilon_p > 0 and math.isfinite(epsilon_p)):
        raise PreconditionError(f"epsilon_p must be positive, got {epsilon_p!r}")


def erm_objective(
    data: Dataset,
    loss: LossSpec,
    lam: float,
    linear: Optional[np.ndarray] = None,
    delta_reg: float = 0.0,
) -> Objective:
    """J(f, D) + linear^T f + (delta_reg / 2) ||f||^2 as an ``Objective``."""
    yX = data.features * data.labels[:, None]
    n = data.n
    reg = lam + delta_reg
    lin = None if linear is None else np.asarray(linear, dtype=float)

    def value_and_gradient(w):
        z = yX @ w
        f = loss.value(z).sum() / n + 0.5 * reg * (w @ w)
        g = yX.T @ loss.deriv(z) / n + reg * w
        if lin is not None:
            f += lin @ w
            g += lin
        return f, g

    return Objective(
        value_at=lambda w: value_and_gradient(w)[0],
        gradient_at=lambda w: value_and_gradient(w)[1],
        strong_convexity_lambda=reg,
        dimension=data.dimension_d,
        value_and_gradient=value_and_gradient,
    )


def erm_minimizer(data, loss, lam, grad_tol=None, max_iters=DEFAULT_MAX_ITERS, linear=None, delta_reg=0.0):
    """Returns ``(weights, grad_tol_used)``."""
    res = solve(erm_objective(data, loss, lam, linear, delta_reg), grad_tol, max_iters)
    return res.x, res.grad_tol


def train_nonprivate(
    data: Dataset,
    loss: LossSpec,
    lam: float,
    *,
    grad_tol: Optional[float] = None,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> TrainedModel:
    _check_training_inputs(data, lam)
    w, tol = erm_minimizer(data, loss, lam, grad_tol, max_iters)
    return TrainedModel(w, "nonprivate", loss, lam, solver_tol=tol)


def output_noise_params(n: int, d: int, lam: float, epsilon_p: float) -> PrivacyParams:
    return PrivacyParams(epsilon_p=epsilon_p, derived_beta=n * lam * epsilon_p / 2.0)


def perturb_output(
    base: TrainedModel,
    n: int,
    epsilon_p: float,
    rng,
    *,
    noise_sampler: Callable = sample_noise,
) -> TrainedModel:
    """Adds output-perturbation noise to a non-private model trained on ``n`` examples."""
    if base.method != "nonprivate" or base.feature_map is not None:
        raise PreconditionError("perturb_output expects a linear non-private model")
    if not (epsilon_p > 0 and math.isfinite(epsilon_p)):
        raise PreconditionError(f"epsilon_p must be positive, got {epsilon_p!r}")
    gen, seed = split_seed(rng)
    params = output_noise_params(n, base.weights.size, base.lam, epsilon_p)
    b = noise_sampler(NoiseParams(base.weights.size, params.derived_beta), gen)
    return TrainedModel(
        base.weights + b, "output", base.loss, base.lam, epsilon_p=epsilon_p, seed=seed,
        solver_tol=base.solver_tol, privacy=params,
    )


def train_output_perturbed(
    data: Dataset,
    loss: LossSpec,
    lam: float,
    epsilon_p: float,
    rng,
    *,
    grad_tol: Optional[float] = None,
    max_iters: int = DEFAULT_MAX_ITERS,
    noise_sampler: Callable = sample_noise,
) -> TrainedModel:
    """Output perturbation: exact minimizer plus noise at ``beta = n lam eps / 2``.

    ``rng`` is an integer seed (recorded in the model) or a Generator.
    """
    _check_training_inputs(data, lam, epsilon_p)
    base = train_nonprivate(data, loss, lam, grad_tol=grad_tol, max_iters=max_iters)
    return perturb_output(base, data.n, epsilon_p, rng, noise_sampler=noise_sampler)


def compute_slack(n: int, lam: float, c: float, epsilon_p: float) -> PrivacyParams:
    """Budget adjustment for objective perturbation.

    ``eps' = eps - log(1 + 2c/(n lam) + c^2/(n lam)^2)``; when that is not
    positive, fall back to ``eps' = eps / 2`` and an extra ridge term
    ``Delta = c / (n (e^{eps/4} - 1)) - lam``.
    """
    for name, v in (("n", n), ("lambda", lam), ("c", c), ("epsilon_p", epsilon_p)):
        if not (v > 0 and math.isfinite(v)):
            raise PreconditionError(f"{name} must be positive, got {v!r}")
    # 1 + 2a + a^2 = (1 + a)^2 with a = c / (n lam)
    eps_prime = epsilon_p - 2.0 * math.log1p(c / (n * lam))
    if eps_prime > 0:
        return PrivacyParams(epsilon_p, eps_prime / 2.0, eps_prime, 0.0)
    delta = c / (n * math.expm1(epsilon_p / 4.0)) - lam
    eps_prime = epsilon_p / 2.0
    return PrivacyParams(epsilon_p, eps_prime / 2.0, eps_prime, delta)


def train_objective_perturbed(
    data: Dataset,
    loss: LossSpec,
    lam: float,
    epsilon_p: float,
    rng,
    *,
    grad_tol: Optional[float] = None,
    max_iters: int = DEFAULT_MAX_ITERS,
    noise_sampler: Callable = sample_noise,
) -> TrainedModel:
    """Objective perturbation: minimize ``J + b^T f / n + (Delta/2) ||f||^2``.

    The curvature bound ``c`` is taken from ``loss``. Huber is accepted; its
    guarantee only holds outside a measure-zero set, which is noted on the model.
    """
    _check_training_inputs(data, lam, epsilon_p)
    gen, seed = split_seed(rng)
    params = compute_slack(data.n, lam, loss.curvature_bound_c, epsilon_p)
    b = noise_sampler(NoiseParams(data.dimension_d, params.derived_beta), gen)
    w, tol = erm_minimizer(
        data, loss, lam, grad_tol, max_iters, linear=np.asarray(b) / data.n, delta_reg=params.delta_reg
    )
    notes = [] if loss.twice_differentiable else [HUBER_CAVEAT]
    return TrainedModel(
        w, "objective", loss, lam, epsilon_p=epsilon_p, seed=seed, solver_tol=tol,
        privacy=params, notes=notes,
    )


TRAINERS = {"output": train_output_perturbed, "objective": train_objective_perturbed}


def train(method: str, data: Dataset, loss: LossSpec, lam: float, epsilon_p=None, rng=None, **kw) -> TrainedModel:
    """Dispatches on ``method`` in {nonprivate, output, objective}."""
    if method == "nonprivate":
        return train_nonprivate(data, loss, lam, **kw)
    if method not in TRAINERS:
        raise PreconditionError(f"unknown method {method!r}; expected one of {METHODS}")
    return TRAINERS[method](data, loss, lam, epsilon_p, rng, **kw)


def _mapped(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if model.feature_map is not None:
        from dperm.kernel import apply_feature_map

        return apply_feature_map(model.feature_map, X)
    return X


def decision_scores(model: TrainedModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.input_dim:
        raise PreconditionError(f"input dimension {X.shape[1]} != model input dimension {model.input_dim}")
    return _mapped(model, X) @ model.weights


def predict_labels(model: TrainedModel, X) -> np.ndarray:
    """Signs of the scores; a zero score predicts +1."""
    return np.where(decision_scores(model, X) >= 0, 1.0, -1.0)


def predict(model: TrainedModel, x) -> dict:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise PreconditionError("predict takes a single feature vector")
    score = float(decision_scores(model, x[None, :])[0])
    return {"score": score, "label": 1 if score >= 0 else -1}
