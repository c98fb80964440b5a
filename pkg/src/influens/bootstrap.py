"""Resampling threshold backends.

Three schemes over an observed count sample of size n:

* mean / upper bound: n-out-of-n resampling of the sample mean, cutoff
  at the upper (1 - alpha) quantile of the replicate means;
* m-out-of-n sample quantile (left-continuous inverse cdf), cutoff at
  the median replicate quantile;
* m-out-of-n empirical mid-quantile, cutoff at the median replicate.

All replicate draws come from one seeded generator as a single index
matrix, so results are deterministic and independent of any execution
schedule; replicate b is row b of that matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._solvers import midquantile_rows
from .errors import EmptyInput, InvalidParameter
from .thresholds import (
    BOOT_MEAN_UPPER,
    BOOT_MIDQUANTILE,
    BOOT_QUANTILE,
    ThresholdRule,
)


def default_subsample_size(n: int) -> int:
    """ceil(n^(2/3)): grows without bound while m/n vanishes."""
    return int(math.ceil(n ** (2.0 / 3.0)))


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 1000
    m: int | None = None
    alpha_or_zeta: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.B < 100:
            raise InvalidParameter("need at least 100 bootstrap replicates")
        if not 0 < self.alpha_or_zeta < 1:
            raise InvalidParameter("level must lie in (0,1)")

    def subsample_size(self, n: int) -> int:
        m = self.m if self.m is not None else default_subsample_size(n)
        if not 1 <= m <= n:
            raise InvalidParameter(f"subsample size {m} outside [1, {n}]")
        return m


def _prepare(values):
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("no values to bootstrap")
    return v


def _draws(values, cfg, m):
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    return values[rng.integers(0, values.size, size=(cfg.B, m))]


def boot1_mean_upper(values, cfg: BootstrapConfig) -> ThresholdRule:
    """Upper confidence bound of the resampled mean as the cutoff."""
    v = _prepare(values)
    n = v.size
    if n < 10:
        raise InvalidParameter("mean bootstrap needs at least 10 values")
    alpha = cfg.alpha_or_zeta
    means = _draws(v, cfg, n).mean(axis=1)
    cutoff = float(np.quantile(means, 1.0 - alpha))
    return ThresholdRule(
        BOOT_MEAN_UPPER, cutoff, {"alpha": alpha, "B": cfg.B, "n": n}
    )


def sample_quantile(draw, zeta):
    """Left-continuous inverse cdf: smallest value with F_hat >= zeta."""
    s = np.sort(np.asarray(draw, dtype=np.float64))
    k = int(math.ceil(zeta * s.size))
    return float(s[max(k - 1, 0)])


def boot2_quantile(values, cfg: BootstrapConfig) -> ThresholdRule:
    """Median of m-out-of-n replicate sample quantiles as the cutoff."""
    v = _prepare(values)
    n = v.size
    m = cfg.subsample_size(n)
    zeta = cfg.alpha_or_zeta
    sorted_rows = np.sort(_draws(v, cfg, m), axis=1)
    k = max(int(math.ceil(zeta * m)) - 1, 0)
    cutoff = float(np.median(sorted_rows[:, k]))
    return ThresholdRule(
        BOOT_QUANTILE, cutoff, {"zeta": zeta, "B": cfg.B, "m": m, "n": n}
    )


def boot3_midquantile(values, cfg: BootstrapConfig) -> ThresholdRule:
    """Median of m-out-of-n replicate mid-quantiles as the cutoff."""
    v = _prepare(values)
    n = v.size
    m = cfg.subsample_size(n)
    zeta = cfg.alpha_or_zeta
    sorted_rows = np.sort(_draws(v, cfg, m), axis=1)
    reps = midquantile_rows(sorted_rows, zeta)
    cutoff = float(np.median(reps))
    return ThresholdRule(
        BOOT_MIDQUANTILE, cutoff, {"zeta": zeta, "B": cfg.B, "m": m, "n": n}
    )
