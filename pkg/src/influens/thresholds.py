"""Mid-distribution / mid-quantile machinery and threshold rules.

The mid-distribution function of a discrete law is
F_mid(x) = F(x) - 0.5 * P(X = x); the mid-quantile inverts it with
linear interpolation between consecutive support atoms, which removes
the discreteness-induced inconsistency of ordinary sample quantiles.
Cutoffs flag an observation when its count strictly exceeds them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import EmptyInput, InvalidParameter, NonConvergence

CLT = "clt"
EMPIRICAL_MID = "empirical_mid"
PARAMETRIC_MID = "parametric_mid"
BOOT_MEAN_UPPER = "boot_mean_upper"
BOOT_QUANTILE = "boot_quantile"
BOOT_MIDQUANTILE = "boot_midquantile"


@dataclass(frozen=True)
class MidDistribution:
    """Discrete cdf together with its mid-distribution values.

    Only atoms carrying positive mass are stored, so ``f_mid`` is
    strictly increasing and lies strictly inside (0, 1).
    """

    support: np.ndarray
    pmf: np.ndarray
    cdf: np.ndarray
    f_mid: np.ndarray
    source: str = "empirical"

    def __post_init__(self):
        for name in ("support", "pmf", "cdf", "f_mid"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if not (self.support.size == self.pmf.size == self.f_mid.size):
            raise InvalidParameter("support/pmf/f_mid lengths differ")
        if self.support.size == 0:
            raise EmptyInput("mid-distribution needs at least one atom")
        if np.any(np.diff(self.support) <= 0):
            raise InvalidParameter("support must be strictly ascending")
        if np.any(np.diff(self.f_mid) <= 0):
            raise InvalidParameter("mid-cdf must be strictly increasing")


def from_pmf(support, pmf, source) -> MidDistribution:
    """Build a MidDistribution from atoms and their masses.

    Atoms below 1e-14 mass are dropped: they are quantile-irrelevant
    and would break the strict monotonicity of the mid-cdf in floats.
    """
    support = np.asarray(support, dtype=np.float64)
    pmf = np.asarray(pmf, dtype=np.float64)
    keep = pmf > 1e-14
    support, pmf = support[keep], pmf[keep]
    cdf = np.cumsum(pmf)
    f_mid = cdf - 0.5 * pmf
    return MidDistribution(support, pmf, cdf, f_mid, source)


def empirical_mid_distribution(values) -> MidDistribution:
    """Mid-distribution of observed counts:
    F_mid(x) = sum_i (1(v_i <= x) - 0.5 * 1(v_i = x)) / n."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("no observed values")
    support, counts = np.unique(v, return_counts=True)
    return from_pmf(support, counts / v.size, "empirical")


def mid_quantile(md: MidDistribution, zeta: float) -> float:
    """Mid-quantile at level zeta, a total function on (0, 1).

    Returns the smallest atom below the first mid-cdf value, the atom
    itself on an exact match, the linear interpolant between the two
    consecutive atoms bracketing zeta, and the largest atom above the
    last mid-cdf value.
    """
    if not (0.0 < zeta < 1.0):
        raise InvalidParameter("zeta must lie strictly inside (0, 1)")
    f = md.f_mid
    x = md.support
    if zeta < f[0]:
        return float(x[0])
    if zeta > f[-1]:
        return float(x[-1])
    k = int(np.searchsorted(f, zeta, side="left"))
    if abs(f[k] - zeta) <= 1e-12:
        return float(x[k])
    # f[k-1] < zeta < f[k]: zeta = lam * f[k-1] + (1 - lam) * f[k]
    lam = (f[k] - zeta) / (f[k] - f[k - 1])
    return float(lam * x[k - 1] + (1.0 - lam) * x[k])


@dataclass(frozen=True)
class ThresholdRule:
    """A fitted cutoff: observations with count > cutoff are flagged."""

    kind: str
    cutoff: float
    params: dict = field(default_factory=dict)

    def flags(self, values, missing=None):
        v = np.asarray(values, dtype=np.float64)
        out = v > self.cutoff
        if missing is not None:
            out = out & ~np.asarray(missing, dtype=bool)
        return out

    def to_dict(self):
        cut = self.cutoff if np.isfinite(self.cutoff) else None
        return {"kind": self.kind, "cutoff": cut, "params": _jsonable(self.params)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def clt_threshold(values, alpha: float = 0.05) -> ThresholdRule:
    """Normal-approximation cutoff: mean + z_{1-alpha} * sd.

    Constant samples carry no spread information; the rule then flags
    nothing (cutoff +inf) and emits a warning.
    """
    if not 0 < alpha < 1:
        raise InvalidParameter("alpha must lie in (0,1)")
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("no values to threshold")
    mean = float(v.mean())
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    if sd == 0.0:
        warnings.warn("zero variance: CLT rule flags nothing", stacklevel=2)
        return ThresholdRule(CLT, np.inf, {"alpha": alpha, "mean": mean, "sd": 0.0})
    cutoff = mean + norm.ppf(1.0 - alpha) * sd
    return ThresholdRule(CLT, float(cutoff), {"alpha": alpha, "mean": mean, "sd": sd})


def empirical_mid_threshold(values, zeta: float = 0.95) -> ThresholdRule:
    """Empirical mid-quantile of the observed counts as the cutoff."""
    md = empirical_mid_distribution(values)
    return ThresholdRule(EMPIRICAL_MID, mid_quantile(md, zeta), {"zeta": zeta})


def parametric_threshold(fit, zeta: float = 0.95) -> ThresholdRule:
    """Mid-quantile of a fitted count family as the cutoff.

    ``fit`` is a CountModelFit; requires a converged fit.
    """
    if not fit.converged:
        raise NonConvergence("refusing to threshold from a non-converged fit")
    family = fit.family
    md = from_pmf(family.support, family.pmf_vector(), f"parametric:{family.kind}")
    cutoff = mid_quantile(md, zeta)
    return ThresholdRule(
        PARAMETRIC_MID,
        cutoff,
        {"zeta": zeta, "family": family.to_dict(), "loglik": fit.loglik},
    )
