"""Private selection of the regularization parameter.

The data are split into ``m + 1`` disjoint equal parts. Candidate ``i`` is
trained privately on part ``i``, every candidate is scored by its number of
mistakes ``z_i`` on the last part, and the released model is drawn with
probability proportional to ``exp(-eps * z_i / 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from dperm.erm import Dataset, TrainedModel, predict_labels, train
from dperm.errors import PreconditionError
from dperm.losses import LossSpec
from dperm.rng import derive_seed, split_seed

# Candidate trainer: (data, lam, epsilon_p, rng) -> TrainedModel
Trainer = Callable[[Dataset, float, float, object], TrainedModel]


def linear_trainer(method: str, loss: LossSpec, **kw) -> Trainer:
    """A ``Trainer`` for the linear private methods."""

    def _train(data, lam, epsilon_p, rng):
        return train(method, data, loss, lam, epsilon_p, rng, **kw)

    return _train


@dataclass(frozen=True)
class TuningConfig:
    """Candidates must be fixed before looking at the private data."""

    lambda_candidates: Sequence[float]
    epsilon_p: float
    trainer: Trainer
    audit: bool = False  # when set, the scores z_i are written into the model

    def __post_init__(self):
        cands = tuple(float(c) for c in self.lambda_candidates)
        if not cands:
            raise PreconditionError("need at least one lambda candidate")
        if any(not (c > 0 and math.isfinite(c)) for c in cands):
            raise PreconditionError("lambda candidates must be positive")
        if not (self.epsilon_p > 0 and math.isfinite(self.epsilon_p)):
            raise PreconditionError("epsilon_p must be positive")
        object.__setattr__(self, "lambda_candidates", cands)

    @property
    def m(self) -> int:
        return len(self.lambda_candidates)


def split_disjoint(data: Dataset, parts: int, rng) -> list[Dataset]:
    """Seeded permutation cut into ``parts`` equal pieces; the remainder is dropped."""
    if int(parts) != parts or parts < 1:
        raise PreconditionError("parts must be a positive integer")
    if data.n < parts:
        raise PreconditionError(f"cannot split {data.n} examples into {parts} parts")
    gen, _ = split_seed(rng)
    size = data.n // parts
    perm = gen.permutation(data.n)
    return [data.subset(perm[i * size:(i + 1) * size]) for i in range(parts)]


def count_mistakes(model: TrainedModel, validation: Dataset) -> int:
    if validation.n == 0:
        return 0
    return int(np.sum(predict_labels(model, validation.features) != validation.labels))


def selection_probabilities(z: Sequence[float], epsilon_p: float) -> np.ndarray:
    """Softmin ``exp(-eps (z_i - min z) / 2)``, normalized."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise PreconditionError("empty score list")
    if not (epsilon_p > 0):
        raise PreconditionError("epsilon_p must be positive")
    w = np.exp(-epsilon_p * (z - z.min()) / 2.0)
    return w / w.sum()


def select_exponential(z: Sequence[float], epsilon_p: float, rng) -> int:
    q = selection_probabilities(z, epsilon_p)
    gen, _ = split_seed(rng)
    # Inverse-CDF draw; the last index absorbs any rounding in the cumulative sum.
    u = gen.random()
    idx = int(np.searchsorted(np.cumsum(q), u, side="right"))
    return min(idx, q.size - 1)


def tune(data: Dataset, config: TuningConfig, rng, min_part_size: int = 1) -> TrainedModel:
    """Trains one model per candidate on disjoint parts and picks one privately.

    Args:
      data: private dataset, split into ``m + 1`` parts.
      config: candidates, budget and trainer. Each candidate gets the full
        budget; the parts are disjoint.
      rng: integer seed or Generator. With an integer seed the split, each
        candidate's training and the final draw use independent derived streams.
      min_part_size: smallest acceptable part.

    Returns:
      The selected model. Its ``extra["tuning"]`` records the candidates and the
      chosen index, plus all scores when ``config.audit`` is set.
    """
    m = config.m
    if data.n // (m + 1) < max(1, min_part_size):
        raise PreconditionError(
            f"{data.n} examples are too few for {m + 1} parts of at least {max(1, min_part_size)}"
        )
    gen, seed = split_seed(rng)
    root = seed if seed is not None else int(gen.integers(0, 2**63))
    parts = split_disjoint(data, m + 1, derive_seed(root, 0))
    validation = parts[m]
    models = []
    for i, lam in enumerate(config.lambda_candidates):
        models.append(config.trainer(parts[i], lam, config.epsilon_p, derive_seed(root, 1, i)))
    z = [count_mistakes(mdl, validation) for mdl in models]
    chosen = select_exponential(z, config.epsilon_p, derive_seed(root, 2))
    out = models[chosen]
    info = {"candidates": list(config.lambda_candidates), "chosen_index": chosen, "part_size": validation.n}
    if config.audit:
        info["mistakes"] = z
    out.extra = dict(out.extra, tuning=info)
    if seed is not None:
        out.seed = seed
    return out
