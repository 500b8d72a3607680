"""Loading delimited tables and turning them into unit-ball datasets.

Pipeline: drop rows with any missing cell, one-hot encode categorical columns,
divide every column by its maximum absolute value, then divide any row whose
norm still exceeds 1 by that norm.

Schema files are JSON::

    {"columns": [{"name": "age", "kind": "numeric"},
                 {"name": "sex", "kind": "categorical", "levels": ["Female", "Male"]}, ...],
     "label": {"column": "income", "positive": [">50K"]},
     "missing": "?", "delimiter": ","}

Categorical columns without ``levels`` take theirs from the data (sorted).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dperm.erm import Dataset
from dperm.errors import PreconditionError
from dperm.rng import split_seed


class TableFormatError(PreconditionError):
    """A malformed input row; the message names the offending line."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # "numeric" | "categorical"
    levels: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise PreconditionError(f"column {self.name!r}: kind must be numeric or categorical")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))


@dataclass(frozen=True)
class Schema:
    columns: tuple
    label_column: str
    positive: tuple
    missing: str = "?"
    delimiter: str = ","

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise PreconditionError("duplicate column names in schema")
        if self.label_column not in names:
            raise PreconditionError(f"label column {self.label_column!r} not among columns")

    @property
    def feature_columns(self) -> list:
        return [c for c in self.columns if c.name != self.label_column]

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        cols = tuple(ColumnSpec(c["name"], c["kind"], c.get("levels")) for c in d["columns"])
        pos = d["label"]["positive"]
        pos = (pos,) if isinstance(pos, str) else tuple(pos)
        return cls(cols, d["label"]["column"], pos, d.get("missing", "?"), d.get("delimiter", ","))

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            entry = {"name": c.name, "kind": c.kind}
            if c.levels is not None:
                entry["levels"] = list(c.levels)
            cols.append(entry)
        return {
            "columns": cols,
            "label": {"column": self.label_column, "positive": list(self.positive)},
            "missing": self.missing,
            "delimiter": self.delimiter,
        }

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def builtin_schema(name: str) -> Schema:
    """``adult`` or ``kddcup99``."""
    text = resources.files("dperm").joinpath("schemas", f"{name}.json").read_text()
    return Schema.from_dict(json.loads(text))


@dataclass
class RawTable:
    """Parsed string cells; ``schema`` has every categorical level resolved."""

    schema: Schema
    rows: list
    line_numbers: list
    missing: np.ndarray  # bool per row

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    def cardinality(self, column: str) -> int:
        for c in self.schema.columns:
            if c.name == column:
                return len(c.levels)
        raise KeyError(column)


@dataclass
class PreprocessReport:
    rows_dropped_missing: int
    output_dimension: int
    column_max: list
    rows_rescaled: int
    feature_names: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows_dropped_missing": self.rows_dropped_missing,
            "output_dimension": self.output_dimension,
            "column_max": self.column_max,
            "rows_rescaled": self.rows_rescaled,
            "feature_names": self.feature_names,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def load_table(path, schema: Schema) -> RawTable:
    """Reads a delimited text file against ``schema``.

    Blank lines are skipped and cells are whitespace-stripped. Rows containing
    the missing marker are kept but flagged.

    Raises:
      TableFormatError: wrong column count, unparseable number, or a category
        not in the declared levels; the message names the line.
    """
    ncol = len(schema.columns)
    idx = {c.name: i for i, c in enumerate(schema.columns)}
    rows, lines, missing = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        for row in reader:
            lineno = reader.line_num
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells):
                continue
            if len(cells) != ncol:
                raise TableFormatError(f"line {lineno}: expected {ncol} columns, found {len(cells)}")
            is_missing = any(c == schema.missing for c in cells)
            for col in schema.columns:
                cell = cells[idx[col.name]]
                if cell == schema.missing:
                    continue
                if col.kind == "numeric" and col.name != schema.label_column:
                    try:
                        v = float(cell)
                    except ValueError:
                        raise TableFormatError(f"line {lineno}: column {col.name!r} is not numeric: {cell!r}") from None
                    if not math.isfinite(v):
                        raise TableFormatError(f"line {lineno}: column {col.name!r} is not finite")
                elif col.levels is not None and col.name != schema.label_column and cell not in col.levels:
                    raise TableFormatError(f"line {lineno}: unknown category {cell!r} for column {col.name!r}")
            rows.append(cells)
            lines.append(lineno)
            missing.append(is_missing)

    resolved = []
    for col in schema.columns:
        if col.kind == "categorical" and col.levels is None and col.name != schema.label_column:
            seen = sorted({r[idx[col.name]] for r in rows if r[idx[col.name]] != schema.missing})
            col = replace(col, levels=tuple(seen))
        resolved.append(col)
    return RawTable(replace(schema, columns=tuple(resolved)), rows, lines, np.array(missing, dtype=bool))


def _encode(table: RawTable, rows: list):
    schema = table.schema
    idx = {c.name: i for i, c in enumerate(schema.columns)}
    blocks, names = [], []
    for col in schema.feature_columns:
        j = idx[col.name]
        if col.kind == "numeric":
            blocks.append(np.array([float(r[j]) for r in rows], dtype=float).reshape(-1, 1))
            names.append(col.name)
        else:
            pos = {lvl: k for k, lvl in enumerate(col.levels)}
            onehot = np.zeros((len(rows), len(col.levels)))
            for i, r in enumerate(rows):
                onehot[i, pos[r[j]]] = 1.0
            blocks.append(onehot)
            names.extend(f"{col.name}={lvl}" for lvl in col.levels)
    X = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    positive = set(schema.positive)
    y = np.array([1.0 if r[idx[schema.label_column]] in positive else -1.0 for r in rows])
    return X, y, names


def _clip_to_unit_ball(X: np.ndarray) -> int:
    """Divides rows with norm > 1 by their norm, in place; returns how many."""
    norms = np.linalg.norm(X, axis=1)
    over = np.flatnonzero(norms > 1.0)
    for i in over:
        X[i] /= norms[i]
        # Division can round up past 1 by an ulp, and vector and batched norms can
        # disagree in the last bit; shrink until every way of measuring agrees.
        while max(np.linalg.norm(X[i]), np.linalg.norm(X[i:i + 1], axis=1)[0], math.sqrt(X[i] @ X[i])) > 1.0:
            X[i] *= 1.0 - 2.0**-52
    return int(over.size)


def preprocess(table: RawTable, scale_rows: Optional[Sequence[int]] = None):
    """Encodes and normalizes ``table``.

    Args:
      table: output of ``load_table``.
      scale_rows: optional indices (into the rows kept after dropping missing
        values) whose column maxima define the scaling, e.g. a training split.
        By default the whole table is used.

    Returns:
      ``(Dataset, PreprocessReport)``.
    """
    kept = [r for r, m in zip(table.rows, table.missing) if not m]
    if not kept:
        raise PreconditionError("no rows left after dropping missing values")
    X, y, names = _encode(table, kept)
    ref = X if scale_rows is None else X[np.asarray(scale_rows, dtype=int)]
    col_max = np.abs(ref).max(axis=0) if ref.shape[0] else np.zeros(X.shape[1])
    nz = col_max > 0
    X[:, nz] /= col_max[nz]
    rescaled = _clip_to_unit_ball(X)
    report = PreprocessReport(
        rows_dropped_missing=table.n_missing,
        output_dimension=X.shape[1],
        column_max=col_max.tolist(),
        rows_rescaled=rescaled,
        feature_names=names,
    )
    return Dataset(X, y), report


def split_train_val_test(data: Dataset, fractions, rng):
    """Disjoint train/validation/test subsets of a seeded permutation.

    Sizes are ``floor(fraction * n)``; leftover rows are unused.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise PreconditionError("fractions must be three nonnegative numbers")
    if sum(fractions) > 1.0 + 1e-12:
        raise PreconditionError(f"fractions sum to {sum(fractions)} > 1")
    sizes = [int(math.floor(f * data.n + 1e-9)) for f in fractions]
    if any(f > 0 and s == 0 for f, s in zip(fractions, sizes)):
        raise PreconditionError(f"{data.n} rows are too few for fractions {fractions}")
    gen, _ = split_seed(rng)
    perm = gen.permutation(data.n)
    out, start = [], 0
    for s in sizes:
        out.append(data.subset(perm[start:start + s]))
        start += s
    return tuple(out)


def save_dataset(data: Dataset, path) -> None:
    """``.npz`` writes binary arrays; anything else writes text rows ``label,x1,...,xd``."""
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, features=data.features, labels=data.labels)
        return
    with open(path, "w") as fh:
        for x, y in zip(data.features, data.labels):
            fh.write(",".join([repr(float(y))] + [repr(float(v)) for v in x]) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            return Dataset(z["features"], z["labels"])
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return Dataset(arr[:, 1:], arr[:, 0])
