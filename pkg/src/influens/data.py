"""Core data containers: validated datasets, selection fits, index sets.

All containers are immutable after construction (arrays are marked
read-only) so they can be shared freely across parallel workers.
Observation indices exposed to users are 1-based; array positions are
0-based and conversion happens only at the container boundary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateResponse,
    DimensionMismatch,
    EmptyInput,
    InvalidParameter,
    NonFiniteValue,
)


class Task(enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"


class Selector(enum.Enum):
    LASSO = "lasso"
    SLASSO = "slasso"
    SCAD = "scad"
    MCP = "mcp"


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Response vector, n x p design matrix and the model kind.

    Column means/sds of X are cached at validation time so penalized
    fits can standardize without re-scanning the matrix.
    """

    y: np.ndarray
    X: np.ndarray
    task: Task
    col_means: np.ndarray = field(repr=False, default=None)
    col_sds: np.ndarray = field(repr=False, default=None)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, rows0):
        """New Dataset keeping the given 0-based rows (order preserved)."""
        rows0 = np.asarray(rows0, dtype=np.intp)
        return validate_dataset(self.y[rows0], self.X[rows0], self.task)

    def standardized_X(self):
        """X with columns centered and scaled to unit (population) sd."""
        sds = np.where(self.col_sds > 0, self.col_sds, 1.0)
        return (self.X - self.col_means) / sds


def validate_dataset(raw_y, raw_X, task) -> Dataset:
    """Validate raw arrays and build an immutable Dataset.

    Raises DimensionMismatch, NonFiniteValue or DegenerateResponse.
    """
    if isinstance(task, str):
        task = Task(task.lower())
    y = np.asarray(raw_y, dtype=np.float64).ravel()
    X = np.asarray(raw_X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be 2-d, got shape {X.shape}")
    n, p = X.shape
    if y.shape[0] != n:
        raise DimensionMismatch(f"y has length {y.shape[0]} but X has {n} rows")
    if n < 4:
        raise DimensionMismatch(f"need at least 4 observations, got {n}")
    if p < 1:
        raise DimensionMismatch("need at least one predictor")
    if not np.all(np.isfinite(y)):
        raise NonFiniteValue("y contains non-finite entries")
    if not np.all(np.isfinite(X)):
        raise NonFiniteValue("X contains non-finite entries")
    if task is Task.LOGISTIC:
        classes = np.unique(y)
        if not np.all(np.isin(classes, (0.0, 1.0))):
            raise DegenerateResponse("logistic response must lie in {0,1}")
        if classes.size < 2:
            raise DegenerateResponse("logistic response has a single class")
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    return Dataset(
        y=_readonly(y),
        X=_readonly(X),
        task=task,
        col_means=_readonly(means),
        col_sds=_readonly(sds),
    )


@dataclass(frozen=True)
class SelectionFit:
    """Result of one penalized fit.

    ``beta`` is on the original predictor scale; ``support`` marks the
    exactly-nonzero coordinates (zeros come out of the thresholding
    updates, never from an epsilon comparison). ``sigma_hat`` is only
    set by the scaled-lasso path.
    """

    beta: np.ndarray
    support: np.ndarray
    lam: float
    selector: Selector
    intercept: float = 0.0
    sigma_hat: float | None = None
    n_iter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta", _readonly(self.beta))
        sup = np.asarray(self.support, dtype=np.int8)
        sup.flags.writeable = False
        object.__setattr__(self, "support", sup)
        if not np.array_equal(self.support, (self.beta != 0.0).astype(np.int8)):
            raise InvalidParameter("support must equal the exact-nonzero pattern")


@dataclass(frozen=True)
class IndexSet:
    """Sorted distinct 1-based observation indices."""

    indices: np.ndarray
    n: int

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size and (idx[0] < 1 or idx[-1] > self.n):
            raise InvalidParameter(f"indices must lie in [1, {self.n}]")
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_zero_based(cls, rows0, n):
        return cls(np.asarray(rows0, dtype=np.int64) + 1, n)

    def zero_based(self):
        return self.indices - 1

    def __len__(self):
        return int(self.indices.size)

    def __contains__(self, i):
        return bool(np.isin(i, self.indices))

    def tolist(self):
        return [int(i) for i in self.indices]


def load_csv(path, task) -> Dataset:
    """Read a dataset from CSV: header row, response first, predictors after.

    Decimal point '.', comma separator. Missing values are rejected.
    """
    try:
        raw = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise EmptyInput(f"could not read CSV {path}: {exc}") from exc
    if raw.size == 0:
        raise EmptyInput(f"{path} holds no data rows")
    raw = np.atleast_2d(raw)
    if raw.shape[1] < 2:
        raise DimensionMismatch("CSV needs a response column plus predictors")
    return validate_dataset(raw[:, 0], raw[:, 1:], task)
