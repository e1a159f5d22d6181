"""Tabular data, longitudinal grouping metadata and predictor preprocessing.

Meta file grammar (one entry per line, ``#`` starts a comment)::

    @time: 3                 # optional; response time t, default 1 + max past index
    age: current             # baseline predictors are labelled current
    bp_3: current
    bp_2: past(2)
    bp_1: past(1)
    outcome: response(continuous)   # or response(binary)

Every CSV header name must be mapped, and exactly one column must be the
response.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised when input data or metadata fail validation."""


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    names: tuple[str, ...] = ()
    response: str = "y"
    outcome: str = "continuous"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise DataError(f"X must be 2-d, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise DataError("missing or non-finite values")
        if self.outcome not in ("continuous", "binary"):
            raise DataError(f"unknown outcome type {self.outcome!r}")
        if self.outcome == "binary" and not np.all((y == 0) | (y == 1)):
            raise DataError("non-binary response: values must be 0 or 1")
        names = self.names or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("names do not match the number of columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", tuple(names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GroupingMeta:
    """Time-group labels of the predictor columns.

    ``time[j]`` is the measurement time of column ``j``: ``t`` for current
    (and baseline) predictors, ``k`` in ``1..t-1`` for past predictors.
    """

    t: int
    time: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=int)
        if self.t < 1:
            raise DataError("response time t must be >= 1")
        if time.ndim != 1 or np.any(time < 1) or np.any(time > self.t):
            raise DataError(f"group labels must lie in 1..{self.t}")
        object.__setattr__(self, "time", time)

    @classmethod
    def all_current(cls, P: int) -> "GroupingMeta":
        return cls(1, np.ones(P, dtype=int))

    @property
    def P(self) -> int:
        return len(self.time)

    @property
    def current(self) -> np.ndarray:
        return np.flatnonzero(self.time == self.t)

    def past(self, k: int) -> np.ndarray:
        if not 1 <= k < self.t:
            raise DataError(f"past group {k} outside 1..{self.t - 1}")
        return np.flatnonzero(self.time == k)

    @property
    def P_current(self) -> int:
        return int(np.sum(self.time == self.t))

    @property
    def past_sizes(self) -> np.ndarray:
        """Sizes P_1, ..., P_{t-1}."""
        return np.array([np.sum(self.time == k) for k in range(1, self.t)], dtype=int)

    def label(self, j: int) -> str:
        k = int(self.time[j])
        return "current" if k == self.t else f"past({k})"


_LABEL = re.compile(
    r"^(current|past\((\d+)\)|response\((continuous|binary)\))$"
)


def parse_meta(text: str) -> tuple[dict[str, int | str], str, str, int | None]:
    """Parse meta text into (labels, response name, outcome, declared t).

    Labels map column name to a past index ``k`` or the string ``"current"``.
    """
    labels: dict[str, int | str] = {}
    response = outcome = None
    t = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise DataError(f"meta line {lineno}: expected 'name: label'")
        name, label = (s.strip() for s in line.rsplit(":", 1))
        if name == "@time":
            try:
                t = int(label)
            except ValueError:
                raise DataError(f"meta line {lineno}: bad time {label!r}") from None
            continue
        m = _LABEL.match(label)
        if not m or not name:
            raise DataError(f"meta line {lineno}: bad label {label!r}")
        if name in labels or name == response:
            raise DataError(f"meta line {lineno}: duplicate column {name!r}")
        if m.group(3):
            if response is not None:
                raise DataError("meta declares more than one response")
            response, outcome = name, m.group(3)
        elif m.group(2):
            k = int(m.group(2))
            if k < 1:
                raise DataError(f"meta line {lineno}: past index must be >= 1")
            labels[name] = k
        else:
            labels[name] = "current"
    if response is None:
        raise DataError("meta declares no response column")
    return labels, response, outcome, t


def load_csv(path, meta_path) -> tuple[Dataset, GroupingMeta]:
    """Load a CSV with header plus its meta file; column order is preserved."""
    labels, response, outcome, t = parse_meta(Path(meta_path).read_text())
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    for name in header:
        if name != response and name not in labels:
            raise DataError(f"unmapped column {name!r}")
    for name in list(labels) + [response]:
        if name not in header:
            raise DataError(f"meta column {name!r} not found in CSV header")
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DataError(f"row {i + 2}: expected {len(header)} cells, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"non-numeric cell {cell!r} at row {i + 2}, column {header[j]!r}"
                ) from None
    if values.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    if not np.all(np.isfinite(values)):
        raise DataError("missing values are not supported")

    names = [h for h in header if h != response]
    cols = [header.index(h) for h in names]
    X = values[:, cols]
    y = values[:, header.index(response)]
    constant = [names[j] for j in range(X.shape[1]) if X[:, j].min() == X[:, j].max()]
    if constant:
        raise DataError(f"constant predictor column(s): {', '.join(constant)}")

    max_past = max((k for k in labels.values() if k != "current"), default=0)
    if t is None:
        t = max_past + 1
    if max_past >= t:
        raise DataError(f"past({max_past}) is not earlier than response time {t}")
    time = [t if labels[h] == "current" else labels[h] for h in names]
    ds = Dataset(X, y, tuple(names), response, outcome)
    return ds, GroupingMeta(t, np.array(time))


@dataclass(frozen=True)
class ScalingRecord:
    """Linear map of a continuous response onto [-0.5, 0.5]."""

    lo: float
    hi: float

    def transform(self, y):
        return (np.asarray(y, dtype=float) - self.lo) / (self.hi - self.lo) - 0.5

    def inverse(self, y):
        return (np.asarray(y, dtype=float) + 0.5) * (self.hi - self.lo) + self.lo

    def inverse_variance(self, s2):
        return np.asarray(s2, dtype=float) * (self.hi - self.lo) ** 2


def standardize(ds: Dataset) -> tuple[Dataset, ScalingRecord]:
    if ds.outcome != "continuous":
        raise DataError("standardize requires a continuous response")
    lo, hi = float(ds.y.min()), float(ds.y.max())
    if hi == lo:
        raise DataError("degenerate response: max equals min")
    rec = ScalingRecord(lo, hi)
    return replace(ds, y=rec.transform(ds.y)), rec


@dataclass(frozen=True)
class ColumnTransform:
    """Per-column empirical CDF mapping predictors into [0, 1].

    The ``m`` distinct training values of a column are sent to ``i/(m-1)``
    and values in between are interpolated linearly; values outside the
    training range are clamped.  The map is strictly increasing on the
    training range, so hard splits are unaffected by it.
    """

    knots: tuple[np.ndarray, ...]

    @classmethod
    def fit(cls, X) -> "ColumnTransform":
        X = np.asarray(X, dtype=float)
        knots = []
        for j in range(X.shape[1]):
            u = np.unique(X[:, j])
            if len(u) < 2:
                raise DataError(f"column {j} is constant and cannot be split")
            knots.append(u)
        return cls(tuple(knots))

    @property
    def P(self) -> int:
        return len(self.knots)

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.P:
            raise DataError(f"expected {self.P} columns, got {X.shape[1]}")
        out = np.empty_like(X)
        for j, u in enumerate(self.knots):
            out[:, j] = np.interp(X[:, j], u, np.linspace(0.0, 1.0, len(u)))
        return out

    def inverse_column(self, j: int, values) -> np.ndarray:
        u = self.knots[j]
        return np.interp(values, np.linspace(0.0, 1.0, len(u)), u)

    def cutpoints(self, n_cuts: int = 100) -> list[np.ndarray]:
        """Candidate cutpoints on the transformed scale, at most ``n_cuts`` per column.

        Candidates are midpoints between consecutive distinct values; when a
        column has more of them than ``n_cuts`` an evenly spaced (quantile)
        subset is kept.
        """
        grid = []
        for u in self.knots:
            m = len(u)
            mids = (np.arange(m - 1) + 0.5) / (m - 1)
            if len(mids) > n_cuts:
                idx = np.round(np.linspace(0, len(mids) - 1, n_cuts)).astype(int)
                mids = mids[np.unique(idx)]
            grid.append(mids)
        return grid

    def to_dict(self) -> dict:
        return {"knots": [u.tolist() for u in self.knots]}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnTransform":
        return cls(tuple(np.asarray(u, dtype=float) for u in d["knots"]))
