import math

import numpy as np
import pytest
from scipy import stats

from dperm.erm import Dataset, TrainedModel, train_nonprivate
from dperm.errors import PreconditionError
from dperm.experiments import synthetic_dataset
from dperm.losses import LossSpec
from dperm.rng import derive_seed
from dperm.tuning import (
    TuningConfig,
    count_mistakes,
    linear_trainer,
    select_exponential,
    selection_probabilities,
    split_disjoint,
    tune,
)

LOGISTIC = LossSpec("logistic")


def small_data(n, seed=0):
    return synthetic_dataset(n, 3, seed)


def test_split_equal_and_disjoint():
    data = Dataset(np.linspace(-1, 1, 100)[:, None], np.ones(100))
    parts = split_disjoint(data, 5, 0)
    assert [p.n for p in parts] == [20] * 5
    vals = np.concatenate([p.features[:, 0] for p in parts])
    assert np.unique(vals).size == 100


def test_split_drops_remainder():
    data = Dataset(np.linspace(-1, 1, 101)[:, None], np.ones(101))
    parts = split_disjoint(data, 5, 0)
    assert [p.n for p in parts] == [20] * 5
    assert np.unique(np.concatenate([p.features[:, 0] for p in parts])).size == 100


def test_split_deterministic_and_validated():
    data = small_data(50)
    a, b = split_disjoint(data, 3, 9), split_disjoint(data, 3, 9)
    assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))
    with pytest.raises(PreconditionError):
        split_disjoint(small_data(2), 3, 0)


def test_count_mistakes_cases():
    X = np.array([[0.5], [-0.5], [0.2], [-0.9]])
    y = np.array([1.0, -1.0, 1.0, -1.0])
    data = Dataset(X, y)
    good = TrainedModel(np.array([1.0]), "nonprivate", LOGISTIC, 1.0)
    assert count_mistakes(good, data) == 0
    zero = TrainedModel(np.array([0.0]), "nonprivate", LOGISTIC, 1.0)
    assert count_mistakes(zero, data) == 2
    other = small_data(80, 3)
    model = train_nonprivate(other, LOGISTIC, 0.1)
    flipped = Dataset(other.features, -other.labels)
    assert count_mistakes(model, flipped) == other.n - count_mistakes(model, other)


def test_two_candidate_probabilities():
    q = selection_probabilities([0, 2], 1.0)
    assert q == pytest.approx([1 / (1 + math.exp(-1)), math.exp(-1) / (1 + math.exp(-1))], abs=1e-15)
    assert q == pytest.approx([0.7311, 0.2689], abs=1e-4)
    gen = np.random.default_rng(0)
    picks = np.array([select_exponential([0, 2], 1.0, gen) for _ in range(100_000)])
    p1 = np.mean(picks == 0)
    assert abs(p1 - q[0]) < 3 * math.sqrt(q[0] * q[1] / 100_000)


def test_equal_scores_uniform_and_large_epsilon():
    assert selection_probabilities([3, 3, 3, 3], 0.7) == pytest.approx([0.25] * 4)
    q = selection_probabilities([0, 1], 100.0)
    assert q[0] >= 1 - 1e-20
    assert q[1] == pytest.approx(math.exp(-50) / (1 + math.exp(-50)), rel=1e-12)


def test_shift_invariance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        z = rng.integers(0, 50, size=6).astype(float)
        c = rng.uniform(-1e3, 1e3)
        assert np.max(np.abs(selection_probabilities(z, 0.3) - selection_probabilities(z + c, 0.3))) < 1e-12


def test_no_underflow_for_large_scores():
    q = selection_probabilities([1e6, 1e6 + 1], 2.0)
    assert np.all(np.isfinite(q)) and q.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(3))
def test_chi_square_against_closed_form(seed):
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 6, size=5)
    eps = 0.8
    q = selection_probabilities(z, eps)
    gen = np.random.default_rng(100 + seed)
    picks = np.array([select_exponential(z, eps, gen) for _ in range(100_000)])
    counts = np.bincount(picks, minlength=5)
    keep = q * 100_000 >= 5
    res = stats.chisquare(counts[keep], q[keep] * 100_000 * counts[keep].sum() / (q[keep] * 100_000).sum())
    assert res.pvalue > 0.01


def test_select_rejects_empty():
    with pytest.raises(PreconditionError):
        select_exponential([], 1.0, 0)


def test_single_candidate_returned():
    data = small_data(100)
    cfg = TuningConfig([0.1], 1.0, linear_trainer("objective", LOGISTIC))
    m = tune(data, cfg, 3)
    assert m.lam == 0.1 and m.extra["tuning"]["chosen_index"] == 0
    assert "mistakes" not in m.extra["tuning"]


def test_tune_insufficient_data():
    cfg = TuningConfig([0.1, 0.2, 0.3], 1.0, linear_trainer("output", LOGISTIC))
    with pytest.raises(PreconditionError):
        tune(small_data(3), cfg, 0)


def test_tune_deterministic_and_audit_scores():
    data = small_data(400)
    cfg = TuningConfig([1e-3, 1e-2, 1e-1], 1.0, linear_trainer("objective", LOGISTIC), audit=True)
    a, b = tune(data, cfg, 11), tune(data, cfg, 11)
    assert np.array_equal(a.weights, b.weights)
    assert len(a.extra["tuning"]["mistakes"]) == 3
    assert a.seed == 11


def test_utility_bound_holds_in_95_percent():
    # z_chosen <= z_min + 2 log(m / delta) / eps
    m, eps, delta = 5, 1.0, 0.05
    cands = [1e-4, 1e-3, 1e-2, 1e-1, 1.0]
    data = synthetic_dataset(600, 4, 0)
    held = 0
    for run in range(500):
        cfg = TuningConfig(cands, eps, linear_trainer("output", LOGISTIC), audit=True)
        model = tune(data, cfg, derive_seed(5, run))
        z = model.extra["tuning"]["mistakes"]
        held += z[model.extra["tuning"]["chosen_index"]] <= min(z) + 2 * math.log(m / delta) / eps
    assert held / 500 >= 0.95


def test_clear_winner_selected_often():
    z = [0, 10, 12, 15]
    q = selection_probabilities(z, 2.0)
    assert q[0] > 0.9
    gen = np.random.default_rng(3)
    picks = [select_exponential(z, 2.0, gen) for _ in range(10_000)]
    assert np.mean(np.array(picks) == 0) > 0.9
