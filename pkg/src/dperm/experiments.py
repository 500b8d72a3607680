"""Experiment harness: privacy-accuracy grids, learning curves, result files.

Every grid cell draws its randomness from ``derive_seed(seed, cell key)``, so
results do not depend on the worker count or on the order cells finish in.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from itertools import groupby
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dperm.erm import METHODS, Dataset, perturb_output, predict_labels, train, train_nonprivate
from dperm.errors import PreconditionError
from dperm.losses import LossSpec
from dperm.rng import as_generator, derive_seed
from dperm.tuning import TuningConfig, count_mistakes, linear_trainer, split_disjoint, tune

RESULT_SCHEMA_VERSION = 1
DEFAULT_FOLDS = 10
DEFAULT_REPEATS = 50
# Reduced preset for desk-scale runs.
DESK_FOLDS = 5
DESK_REPEATS = 10


def synthetic_dataset(
    n: int,
    d: int,
    rng,
    positive_fraction: float = 0.25,
    separation: float = 1.5,
) -> Dataset:
    """Gaussian class-conditional data with an imbalanced label prior.

    The first coordinate is a constant that plays the role of a bias term. The
    remaining ``d - 1`` coordinates are ``N(y * separation * u / 2, I)`` for a
    random unit vector ``u``. Rows are divided by a common scale and then any
    row still outside the unit ball is projected onto it.
    """
    if d < 2:
        raise PreconditionError("synthetic data needs d >= 2 (one coordinate is the bias)")
    if n < 1:
        raise PreconditionError("n must be positive")
    if not 0 < positive_fraction < 1:
        raise PreconditionError("positive_fraction must be in (0, 1)")
    gen = as_generator(rng)
    u = gen.standard_normal(d - 1)
    u /= np.linalg.norm(u)
    y = np.where(gen.random(n) < positive_fraction, 1.0, -1.0)
    z = gen.standard_normal((n, d - 1)) + np.outer(y, 0.5 * separation * u)
    X = np.hstack([np.ones((n, 1)), z]) / math.sqrt(d + separation**2 / 4)
    norms = np.linalg.norm(X, axis=1)
    over = norms > 1.0
    X[over] /= norms[over, None] * (1.0 + 1e-15)
    return Dataset(X, y)


@dataclass(frozen=True)
class ExperimentGrid:
    methods: tuple
    losses: tuple  # of LossSpec
    epsilons: tuple
    lambdas: tuple
    folds: int = DEFAULT_FOLDS
    repeats: int = DEFAULT_REPEATS
    seed: int = 0
    workers: int = 1
    time_budget: Optional[float] = None  # seconds; exceeded -> partial result
    grad_tol: Optional[float] = None
    dataset: str = "synthetic"

    def __post_init__(self):
        for name in ("methods", "losses", "lambdas"):
            if not getattr(self, name):
                raise PreconditionError(f"grid needs at least one entry in {name}")
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise PreconditionError(f"unknown methods {bad}")
        if self.private_methods and not self.epsilons:
            raise PreconditionError("private methods need at least one epsilon")
        if any(not (e > 0) for e in self.epsilons) or any(not (lam > 0) for lam in self.lambdas):
            raise PreconditionError("epsilons and lambdas must be positive")
        if self.repeats < 1 or self.folds < 1 or self.workers < 1:
            raise PreconditionError("folds, repeats and workers must be >= 1")

    @property
    def private_methods(self) -> tuple:
        return tuple(m for m in self.methods if m != "nonprivate")

    def expected_record_count(self) -> int:
        """Non-private cells contribute one record per fold; private ones add epsilons x repeats."""
        per = len(self.losses) * len(self.lambdas) * self.folds
        n_np = per if "nonprivate" in self.methods else 0
        return n_np + per * len(self.private_methods) * len(self.epsilons) * self.repeats

    def to_dict(self) -> dict:
        d = asdict(self)
        d["losses"] = [loss.to_dict() for loss in self.losses]
        d.pop("workers")
        d.pop("time_budget")
        return d


@dataclass
class Record:
    method: str
    loss: str
    h: Optional[float]
    epsilon_p: Optional[float]  # None for the non-private baseline
    lam: float
    fold: int
    repeat: int
    n_train: int
    n_test: int
    false_pos: int
    false_neg: int
    test_error: float
    false_pos_rate: float  # false positives / n_test
    false_neg_rate: float  # false negatives / n_test
    wall_time: Optional[float] = None

    def sort_key(self):
        eps = -math.inf if self.epsilon_p is None else self.epsilon_p
        return (self.method, self.loss, self.h or 0.0, eps, self.lam, self.fold, self.repeat, self.n_train)


RECORD_FIELDS = [f.name for f in fields(Record)]


@dataclass
class ExperimentResult:
    records: list
    partial: bool = False
    meta: dict = field(default_factory=dict)

    def sorted_records(self) -> list:
        return sorted(self.records, key=Record.sort_key)


def _score(model, test: Dataset, meta: dict, wall: float) -> Record:
    pred = predict_labels(model, test.features)
    fp = int(np.sum((pred == 1.0) & (test.labels == -1.0)))
    fn = int(np.sum((pred == -1.0) & (test.labels == 1.0)))
    nt = test.n
    return Record(
        n_test=nt, false_pos=fp, false_neg=fn, test_error=(fp + fn) / nt,
        false_pos_rate=fp / nt, false_neg_rate=fn / nt, wall_time=wall, **meta,
    )


def kfold_indices(n: int, folds: int, rng) -> list:
    """``(train_idx, test_idx)`` for each fold of a seeded permutation."""
    if folds < 2:
        raise PreconditionError("cross-validation needs at least 2 folds")
    if n < folds:
        raise PreconditionError(f"{n} examples are too few for {folds} folds")
    perm = as_generator(rng).permutation(n)
    chunks = np.array_split(perm, folds)
    return [(np.concatenate(chunks[:k] + chunks[k + 1:]), chunks[k]) for k in range(folds)]


def _run_cell(args) -> list:
    """One (method, loss, lambda, fold) cell: every epsilon and repeat."""
    method, mi, loss, li, lam, lj, fold, train_data, test_data, grid = args
    base_meta = dict(method=method, loss=loss.kind, h=loss.h, lam=lam, fold=fold, n_train=train_data.n)
    kw = {"grad_tol": grid.grad_tol}
    out = []
    if method == "nonprivate":
        t0 = time.perf_counter()
        model = train_nonprivate(train_data, loss, lam, **kw)
        out.append(_score(model, test_data, dict(base_meta, epsilon_p=None, repeat=0), time.perf_counter() - t0))
        return out
    base, base_time = None, 0.0
    if method == "output":
        # The exact minimizer does not depend on the noise; solve it once per cell.
        t0 = time.perf_counter()
        base = train_nonprivate(train_data, loss, lam, **kw)
        base_time = time.perf_counter() - t0
    for ei, eps in enumerate(grid.epsilons):
        for r in range(grid.repeats):
            seed = derive_seed(grid.seed, 1, mi, li, ei, lj, fold, r)
            t0 = time.perf_counter()
            if base is not None:
                model = perturb_output(base, train_data.n, eps, seed)
            else:
                model = train(method, train_data, loss, lam, eps, seed, **kw)
            wall = time.perf_counter() - t0 + base_time
            out.append(_score(model, test_data, dict(base_meta, epsilon_p=eps, repeat=r), wall))
    return out


def _run_cells(cells: list, workers: int, time_budget: Optional[float]):
    start = time.perf_counter()
    records, partial = [], False
    if workers == 1:
        for cell in cells:
            if time_budget is not None and time.perf_counter() - start > time_budget:
                partial = True
                break
            records += _run_cell(cell)
        return records, partial
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_cell, c) for c in cells]
        for fut in futures:
            remaining = None if time_budget is None else max(0.0, time_budget - (time.perf_counter() - start))
            try:
                records += fut.result(timeout=remaining)
            except TimeoutError:
                partial = True
                for f in futures:
                    f.cancel()
                break
    return records, partial


def run_privacy_accuracy(grid: ExperimentGrid, data: Dataset) -> ExperimentResult:
    """k-fold cross-validated test error for every grid cell.

    Non-private cells have one record per fold (no epsilon, no repeats). If the
    time budget runs out the finished cells are returned with ``partial=True``.
    """
    splits = kfold_indices(data.n, grid.folds, derive_seed(grid.seed, 0))
    cells = []
    for mi, method in enumerate(grid.methods):
        for li, loss in enumerate(grid.losses):
            for lj, lam in enumerate(grid.lambdas):
                for k, (tr, te) in enumerate(splits):
                    cells.append((method, mi, loss, li, float(lam), lj, k, data.subset(tr), data.subset(te), grid))
    records, partial = _run_cells(cells, grid.workers, grid.time_budget)
    meta = {"experiment": "privacy_accuracy", "grid": grid.to_dict(), "n": data.n, "d": data.dimension_d}
    return ExperimentResult(records, partial, meta)


def _select_nonprivate(parts: list, candidates: Sequence[float], loss, grad_tol):
    """Trains each candidate on all but the last part; lowest validation error wins.

    Ties go to the smallest lambda.
    """
    train_data = parts[0]
    for p in parts[1:-1]:
        train_data = train_data.concat(p)
    best = None
    for lam in sorted(candidates):
        model = train_nonprivate(train_data, loss, lam, grad_tol=grad_tol)
        z = count_mistakes(model, parts[-1])
        if best is None or z < best[0]:
            best = (z, model)
    return best[1]


def run_learning_curve(
    grid: ExperimentGrid,
    data: Dataset,
    n_schedule: Sequence[int],
    test_fraction: float = 0.2,
) -> ExperimentResult:
    """Test error against training-set size, with lambda chosen by tuning.

    ``grid.lambdas`` are the tuning candidates. For each ``n`` in the schedule
    and each repeat, ``(m + 1) n`` examples are drawn from the training pool:
    private methods go through ``tune`` (each candidate sees ``n`` examples);
    the non-private baseline trains every candidate on the first ``m n`` and
    picks the best on the remaining ``n``. The test set is held out once.
    ``fold`` holds the index into ``n_schedule``.
    """
    m = len(grid.lambdas)
    gen = as_generator(derive_seed(grid.seed, 0))
    perm = gen.permutation(data.n)
    n_test = int(round(test_fraction * data.n))
    test_data, pool = data.subset(perm[:n_test]), data.subset(perm[n_test:])
    if n_test < 1:
        raise PreconditionError("test set is empty")
    need = (m + 1) * max(n_schedule)
    if pool.n < need:
        raise PreconditionError(f"largest n needs {need} training examples, only {pool.n} available")

    start = time.perf_counter()
    records, partial = [], False
    for ni, n in enumerate(n_schedule):
        for mi, method in enumerate(grid.methods):
            for li, loss in enumerate(grid.losses):
                eps_list = [None] if method == "nonprivate" else list(grid.epsilons)
                reps = 1 if method == "nonprivate" else grid.repeats
                for ei, eps in enumerate(eps_list):
                    for r in range(reps):
                        if grid.time_budget is not None and time.perf_counter() - start > grid.time_budget:
                            partial = True
                            break
                        seed = derive_seed(grid.seed, 2, ni, mi, li, ei, r)
                        sub = pool.subset(as_generator(seed).permutation(pool.n)[: (m + 1) * n])
                        t0 = time.perf_counter()
                        if method == "nonprivate":
                            parts = split_disjoint(sub, m + 1, derive_seed(seed, 0))
                            model = _select_nonprivate(parts, grid.lambdas, loss, grid.grad_tol)
                        else:
                            cfg = TuningConfig(grid.lambdas, eps, linear_trainer(method, loss, grad_tol=grid.grad_tol))
                            model = tune(sub, cfg, derive_seed(seed, 1))
                        meta = dict(method=method, loss=loss.kind, h=loss.h, epsilon_p=eps, lam=model.lam,
                                    fold=ni, repeat=r, n_train=n)
                        records.append(_score(model, test_data, meta, time.perf_counter() - t0))
    meta = {"experiment": "learning_curve", "grid": grid.to_dict(), "n_schedule": list(n_schedule),
            "n_test": n_test}
    return ExperimentResult(records, partial, meta)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_results(result: ExperimentResult, path, fmt: str = "csv", include_timing: bool = False) -> None:
    """Writes sorted records as CSV or JSON.

    Output is byte-identical for identical inputs. Wall times vary run to run,
    so they are left blank unless ``include_timing`` is set.
    """
    if not result.records:
        raise PreconditionError("no records to write")
    recs = []
    for rec in result.sorted_records():
        d = asdict(rec)
        if not include_timing:
            d["wall_time"] = None
        recs.append(d)
    path = Path(path)
    if fmt == "json":
        doc = {"schema_version": RESULT_SCHEMA_VERSION, "partial": result.partial, "meta": result.meta,
               "records": recs}
        path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["schema_version", "partial"] + RECORD_FIELDS)
            for d in recs:
                w.writerow([RESULT_SCHEMA_VERSION, int(result.partial)] + [_fmt(d[k]) for k in RECORD_FIELDS])
    else:
        raise PreconditionError(f"unknown format {fmt!r}; use csv or json")


_INT_FIELDS = {"fold", "repeat", "n_train", "n_test", "false_pos", "false_neg"}
_STR_FIELDS = {"method", "loss"}


def load_results(path) -> ExperimentResult:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
        return ExperimentResult([Record(**r) for r in doc["records"]], doc["partial"], doc.get("meta", {}))
    rows = list(csv.DictReader(text.splitlines()))
    records, partial = [], False
    for row in rows:
        if int(row.pop("schema_version")) != RESULT_SCHEMA_VERSION:
            raise PreconditionError("unsupported result schema version")
        partial = bool(int(row.pop("partial")))
        vals = {}
        for k, v in row.items():
            if k in _STR_FIELDS:
                vals[k] = v
            elif v == "":
                vals[k] = None
            elif k in _INT_FIELDS:
                vals[k] = int(v)
            else:
                vals[k] = float(v)
        records.append(Record(**vals))
    return ExperimentResult(records, partial)


def summarize(result: ExperimentResult) -> list:
    """Mean error and FP/FN rates per (method, loss, h, epsilon, lambda)."""
    key = lambda r: r.sort_key()[:5]  # noqa: E731
    out = []
    for k, grp in groupby(sorted(result.records, key=key), key=key):
        grp = list(grp)
        g0 = grp[0]
        out.append({
            "method": g0.method, "loss": g0.loss, "h": g0.h, "epsilon_p": g0.epsilon_p, "lambda": g0.lam,
            "count": len(grp),
            "test_error": float(np.mean([r.test_error for r in grp])),
            "false_pos_rate": float(np.mean([r.false_pos_rate for r in grp])),
            "false_neg_rate": float(np.mean([r.false_neg_rate for r in grp])),
        })
    return out
