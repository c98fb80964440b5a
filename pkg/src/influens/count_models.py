"""Parametric count families for selection-change counts.

Six families: an association-tilted binomial (tilt parameter nu, nu=1
recovers the binomial exactly), a dispersion-tilted Poisson (nu=1
recovers the Poisson), the beta-binomial, the generalized Poisson of
the Consul-Jain form, and binomial / Poisson finite mixtures fitted by
EM. All pmfs are evaluated in log space; unbounded supports are
truncated at the smallest point leaving less than 1e-12 tail mass and
renormalized.

Maximum likelihood uses a derivative-free coordinate search with
golden-section line minimization on log/logit-transformed parameters,
so no pmf gradients are required.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln, logsumexp

from . import _solvers
from .errors import (
    AllZeroData,
    IdentifiabilityViolation,
    InvalidParameter,
    NonConvergence,
)

CMB = "cmb"
CMP = "cmp"
BB = "bb"
GP = "gp"
BINOM_MIX = "binom_mix"
POIS_MIX = "pois_mix"

BOUNDED_KINDS = (CMB, BB, BINOM_MIX)
ALL_KINDS = (CMB, CMP, BB, GP, BINOM_MIX, POIS_MIX)

_TAIL = 1e-12
_MAX_SUPPORT = 20000


@dataclass(frozen=True)
class CountFamily:
    """A fully specified count distribution on a finite support grid."""

    kind: str
    params: dict
    support: np.ndarray = field(repr=False)
    logpmf: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.support, dtype=np.int64)
        lp = np.asarray(self.logpmf, dtype=np.float64)
        s.flags.writeable = False
        lp.flags.writeable = False
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "logpmf", lp)

    def pmf_vector(self):
        return np.exp(self.logpmf)

    def pmf(self, k):
        k = np.asarray(k)
        out = np.zeros(k.shape, dtype=np.float64)
        inside = (k >= self.support[0]) & (k <= self.support[-1])
        idx = np.clip(k - self.support[0], 0, self.support.size - 1).astype(np.int64)
        out[inside] = np.exp(self.logpmf[idx[inside]])
        return out if out.ndim else float(out)

    def cdf(self, k):
        cum = np.cumsum(self.pmf_vector())
        k = np.asarray(k)
        idx = np.clip(k - self.support[0], -1, self.support.size - 1).astype(np.int64)
        out = np.where(idx < 0, 0.0, cum[np.maximum(idx, 0)])
        out = np.where(k >= self.support[-1], 1.0, out)
        return out if out.ndim else float(out)

    def mean(self):
        return float(self.pmf_vector() @ self.support)

    def var(self):
        m = self.mean()
        return float(self.pmf_vector() @ (self.support - m) ** 2)

    def loglik(self, values):
        v = np.asarray(values, dtype=np.int64)
        if v.size and (v.min() < self.support[0] or v.max() > self.support[-1]):
            return -np.inf
        return float(self.logpmf[v - self.support[0]].sum())

    def sample(self, rng, size):
        cum = np.cumsum(self.pmf_vector())
        u = rng.random(size)
        return self.support[np.searchsorted(cum, u, side="right").clip(0, self.support.size - 1)]

    def to_dict(self):
        clean = {
            k: (v.tolist() if isinstance(v, np.ndarray) else float(v))
            for k, v in self.params.items()
        }
        return {"kind": self.kind, "params": clean}


def _normalize(support, logterms):
    logz = logsumexp(logterms)
    return CountFamily(
        kind="", params={}, support=support, logpmf=logterms - logz
    )


def _finish(kind, params, support, logterms):
    logz = logsumexp(logterms)
    return CountFamily(kind=kind, params=params, support=support, logpmf=logterms - logz)


def _truncated_support(logterm_fn, hint):
    """Smallest prefix 0..M of the support with tail mass < 1e-12."""
    M = max(64, int(hint))
    while True:
        ks = np.arange(M + 1)
        lt = logterm_fn(ks)
        total = logsumexp(lt)
        tail = logsumexp(lt[-8:]) - total
        if tail < math.log(_TAIL) - 2 or M >= _MAX_SUPPORT:
            break
        M *= 2
    # cut at the exact truncation point
    probs = np.exp(lt - total)
    rev_tail = np.cumsum(probs[::-1])[::-1]
    keep = rev_tail >= _TAIL
    M_cut = int(np.max(np.nonzero(keep)[0])) if keep.any() else M
    ks = ks[: M_cut + 1]
    return ks, lt[: M_cut + 1]


def cmb_family(p_trials: int, q: float, nu: float) -> CountFamily:
    """Tilted binomial: pmf proportional to C(p,k)^nu q^k (1-q)^(p-k)."""
    if not 0 < q < 1:
        raise InvalidParameter("q must lie in (0,1)")
    if nu <= 0:
        raise InvalidParameter("nu must be positive")
    if p_trials < 1:
        raise InvalidParameter("p_trials must be >= 1")
    ks = np.arange(p_trials + 1)
    lt = nu * _log_comb(p_trials, ks) + ks * math.log(q) + (p_trials - ks) * math.log1p(-q)
    return _finish(CMB, {"p_trials": p_trials, "q": q, "nu": nu}, ks, lt)


def _log_comb(p_trials, ks):
    return gammaln(p_trials + 1) - gammaln(ks + 1) - gammaln(p_trials - ks + 1)


def cmp_family(lam: float, nu: float) -> CountFamily:
    """Tilted Poisson: pmf proportional to lam^k / (k!)^nu."""
    if lam <= 0 or nu <= 0:
        raise InvalidParameter("lam and nu must be positive")
    mode = lam ** (1.0 / nu)

    def terms(ks):
        return ks * math.log(lam) - nu * gammaln(ks + 1)

    ks, lt = _truncated_support(terms, 4 * mode + 32)
    return _finish(CMP, {"lam": lam, "nu": nu}, ks, lt)


def bb_family(p_trials: int, a: float, b: float) -> CountFamily:
    """Beta-binomial on {0..p_trials}."""
    if a <= 0 or b <= 0:
        raise InvalidParameter("a and b must be positive")
    ks = np.arange(p_trials + 1)
    lt = _log_comb(p_trials, ks) + betaln(ks + a, p_trials - ks + b) - betaln(a, b)
    return _finish(BB, {"p_trials": p_trials, "a": a, "b": b}, ks, lt)


def gp_family(theta: float, lam: float) -> CountFamily:
    """Generalized Poisson, restricted to the proper regime lam in [0,1):
    pmf(k) = theta (theta + k lam)^(k-1) exp(-theta - k lam) / k!."""
    if theta <= 0:
        raise InvalidParameter("theta must be positive")
    if not 0 <= lam < 1:
        raise InvalidParameter("dispersion must lie in [0,1)")
    mean = theta / (1.0 - lam)

    def terms(ks):
        ks = np.asarray(ks, dtype=np.float64)
        out = (
            math.log(theta)
            + (ks - 1) * np.log(theta + ks * lam)
            - (theta + ks * lam)
            - gammaln(ks + 1)
        )
        return out

    ks, lt = _truncated_support(terms, 4 * mean + 32)
    return _finish(GP, {"theta": theta, "lam": lam}, ks, lt)


def binom_mixture_family(p_trials: int, weights, qs) -> CountFamily:
    weights = np.asarray(weights, dtype=np.float64)
    qs = np.asarray(qs, dtype=np.float64)
    _check_mixture(weights, qs.size)
    if np.any((qs <= 0) | (qs >= 1)):
        raise InvalidParameter("component rates must lie in (0,1)")
    ks = np.arange(p_trials + 1)
    comp = (
        _log_comb(p_trials, ks)[None, :]
        + ks[None, :] * np.log(qs)[:, None]
        + (p_trials - ks)[None, :] * np.log1p(-qs)[:, None]
    )
    lt = logsumexp(comp + np.log(weights)[:, None], axis=0)
    return _finish(
        BINOM_MIX,
        {"p_trials": p_trials, "weights": weights, "qs": qs},
        ks,
        lt,
    )


def pois_mixture_family(weights, lams) -> CountFamily:
    weights = np.asarray(weights, dtype=np.float64)
    lams = np.asarray(lams, dtype=np.float64)
    _check_mixture(weights, lams.size)
    if np.any(lams <= 0):
        raise InvalidParameter("component means must be positive")

    def terms(ks):
        comp = ks[None, :] * np.log(lams)[:, None] - lams[:, None] - gammaln(ks + 1)[None, :]
        return logsumexp(comp + np.log(weights)[:, None], axis=0)

    ks, lt = _truncated_support(terms, 4 * lams.max() + 32)
    return _finish(POIS_MIX, {"weights": weights, "lams": lams}, ks, lt)


def _check_mixture(weights, n_comp):
    if weights.size != n_comp or weights.size < 1:
        raise InvalidParameter("weights and components disagree")
    if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-8:
        raise InvalidParameter("weights must be positive and sum to one")


_BUILDERS = {
    CMB: lambda p, th: cmb_family(p, th[0], th[1]),
    CMP: lambda p, th: cmp_family(th[0], th[1]),
    BB: lambda p, th: bb_family(p, th[0], th[1]),
    GP: lambda p, th: gp_family(th[0], th[1]),
}


@dataclass(frozen=True)
class CountModelFit:
    """A fitted family with its attained log-likelihood."""

    family: CountFamily
    loglik: float
    n_used: int
    converged: bool
    loglik_trace: np.ndarray | None = None

    def to_dict(self):
        doc = self.family.to_dict()
        doc["loglik"] = float(self.loglik)
        doc["converged"] = bool(self.converged)
        return doc


def _validated_counts(data, p_trials, family_kind):
    v = np.asarray(data)
    if v.size == 0 or np.any(~np.isfinite(v.astype(np.float64))):
        raise InvalidParameter("count data must be finite")
    vi = v.astype(np.int64)
    if np.any(vi != v) or vi.min() < 0:
        raise InvalidParameter("counts must be nonnegative integers")
    if family_kind in BOUNDED_KINDS and vi.max() > p_trials:
        raise InvalidParameter("counts exceed the trial bound")
    if np.all(vi == 0):
        raise AllZeroData("all counts are zero; every family degenerates")
    return vi


def _logsumexp_fast(a):
    m = a.max()
    return m + math.log(np.exp(a - m).sum())


_BOXES = {
    # transformed coordinates: logit(q), log(nu) etc.
    CMB: ((-16.0, 16.0), (math.log(1e-3), math.log(1e3))),
    CMP: ((math.log(1e-6), math.log(4e3)), (math.log(1e-3), math.log(1e3))),
    BB: ((math.log(1e-4), math.log(1e6)), (math.log(1e-4), math.log(1e6))),
    GP: ((math.log(1e-6), math.log(4e3)), (0.0, 1.0 - 1e-6)),
}


def _to_native(kind, t):
    if kind == CMB:
        return (1.0 / (1.0 + math.exp(-t[0])), math.exp(t[1]))
    if kind == CMP:
        return (math.exp(t[0]), math.exp(t[1]))
    if kind == BB:
        return (math.exp(t[0]), math.exp(t[1]))
    return (math.exp(t[0]), t[1])  # GP: dispersion untransformed


def _moment_starts(kind, vi, p_trials):
    m = vi.mean()
    v = vi.var(ddof=1) if vi.size > 1 else 0.0
    starts = []
    if kind == CMB:
        q0 = min(max(m / p_trials, 1e-6), 1 - 1e-6)
        starts = [(math.log(q0 / (1 - q0)), 0.0), (math.log(q0 / (1 - q0)), math.log(0.3))]
    elif kind == CMP:
        lam0 = max(m, 1e-4)
        starts = [(math.log(lam0), 0.0), (math.log(lam0), math.log(0.5))]
    elif kind == BB:
        q0 = min(max(m / p_trials, 1e-6), 1 - 1e-6)
        # dispersion-matched (a+b) when the variance allows it
        s = 10.0
        if v > m * (1 - q0) and q0 * (1 - q0) > 0:
            rho = min(max((v / (p_trials * q0 * (1 - q0)) - 1) / max(p_trials - 1, 1), 1e-4), 0.99)
            s = (1 - rho) / rho
        starts = [(math.log(max(q0 * s, 1e-4)), math.log(max((1 - q0) * s, 1e-4))),
                  (math.log(1.0), math.log(1.0))]
    elif kind == GP:
        disp = 0.0
        if m > 0 and v > m:
            disp = min(max(1.0 - 1.0 / math.sqrt(v / m), 0.0), 0.9)
        starts = [(math.log(max(m * (1 - disp), 1e-4)), disp),
                  (math.log(max(m, 1e-4)), 0.0)]
    return starts


def _nll_factory(family_kind, p_trials, vals, cnts):
    """Fast negative log-likelihood on transformed parameters.

    Histogram-compressed: O(support) per evaluation, no object churn.
    Unbounded families use a fixed window chosen from the data; any
    parameter whose distribution leaks mass past the window is rejected
    (it cannot be the MLE for data this small).
    """
    vmax = int(vals.max())
    if family_kind in (CMB, BB):
        ks = np.arange(p_trials + 1)
    else:
        ks = np.arange(max(128, 6 * vmax + 64))
    lc = _log_comb(p_trials, ks) if family_kind in (CMB, BB) else None
    lgam = gammaln(ks + 1.0)
    vidx = vals.astype(np.int64)

    def nll(t):
        th = _to_native(family_kind, t)
        if family_kind == CMB:
            q, nu = th
            lt = nu * lc + ks * math.log(q) + (p_trials - ks) * math.log1p(-q)
        elif family_kind == BB:
            a, b = th
            lt = lc + betaln(ks + a, p_trials - ks + b) - betaln(a, b)
        elif family_kind == CMP:
            lam, nu = th
            lt = ks * math.log(lam) - nu * lgam
        else:  # GP
            theta, lam = th
            lt = (
                math.log(theta)
                + (ks - 1) * np.log(theta + ks * lam)
                - (theta + ks * lam)
                - lgam
            )
        logz = _logsumexp_fast(lt)
        if family_kind in (CMP, GP) and lt[-1] - logz > math.log(1e-9):
            return np.inf  # window too short for these parameters
        return -float(cnts @ lt[vidx]) + cnts.sum() * logz

    return nll


def fit_mle(data, family_kind: str, p_trials: int) -> CountModelFit:
    """Maximum likelihood fit of a two-parameter family.

    Treats the counts as if independent. Derivative-free bounded
    search: Nelder-Mead on log/logit-transformed parameters (the
    likelihood ridges of these families defeat axis-aligned searches),
    started from moment estimates, converged when the simplex gain
    drops below 1e-9.
    """
    if family_kind not in (CMB, CMP, BB, GP):
        raise InvalidParameter(f"unknown two-parameter family {family_kind!r}")
    vi = _validated_counts(data, p_trials, family_kind)
    if vi.size < 10:
        raise InvalidParameter("need at least 10 observations to fit")
    vals, cnts = np.unique(vi, return_counts=True)
    cnts = cnts.astype(np.float64)
    box = _BOXES[family_kind]
    raw_nll = _nll_factory(family_kind, p_trials, vals, cnts)

    def nll(t):
        if not (box[0][0] <= t[0] <= box[0][1] and box[1][0] <= t[1] <= box[1][1]):
            return np.inf
        return raw_nll(t)

    from scipy.optimize import minimize

    best_t, best_f, best_conv = None, np.inf, False
    for start in _moment_starts(family_kind, vi, p_trials):
        t0 = np.array([
            min(max(start[0], box[0][0]), box[0][1]),
            min(max(start[1], box[1][0]), box[1][1]),
        ])
        if not np.isfinite(nll(t0)):
            continue
        res = minimize(
            nll, t0, method="Nelder-Mead",
            options={"xatol": 1e-9, "fatol": 1e-9, "maxfev": 600},
        )
        if res.fun < best_f:
            best_t, best_f, best_conv = res.x, float(res.fun), bool(res.success)
    if best_t is None or not np.isfinite(best_f):
        raise NonConvergence(f"{family_kind} likelihood had no finite optimum")
    fam = _BUILDERS[family_kind](p_trials, _to_native(family_kind, best_t))
    return CountModelFit(fam, -best_f, int(vi.size), best_conv)


def _quantile_spread_init(vi, K, p_trials, kind, rng):
    qs = np.quantile(vi, (np.arange(K) + 0.5) / K)
    jitter = rng.normal(scale=0.05, size=K)
    if kind == BINOM_MIX:
        theta = np.clip(qs / p_trials + jitter / p_trials, 1e-6, 1 - 1e-6)
    else:
        theta = np.maximum(qs * (1 + jitter) + 0.01, 1e-4)
    w = rng.dirichlet(np.full(K, 8.0))
    return theta.astype(np.float64), np.maximum(w, 1e-3) / np.maximum(w, 1e-3).sum()


def fit_mixture_em(data, K: int, kind: str, p_trials: int, seed: int = 0,
                   n_restarts: int = 10) -> CountModelFit:
    """EM fit of a K-component mixture, best of seeded restarts.

    Restarts are initialized by quantile spread plus seeded jitter; a
    restart whose smallest weight collapses below 1e-8 is discarded and
    retried, and if every restart collapses the best non-collapsed
    iterate is returned with converged=False.
    """
    if kind not in (BINOM_MIX, POIS_MIX):
        raise InvalidParameter(f"unknown mixture kind {kind!r}")
    if K < 1:
        raise InvalidParameter("K must be >= 1")
    if kind == BINOM_MIX and p_trials < 2 * K - 1:
        raise IdentifiabilityViolation(
            f"binomial mixtures need p_trials >= 2K-1 (got {p_trials} < {2 * K - 1})"
        )
    vi = _validated_counts(data, p_trials, kind)
    vals, cnts = np.unique(vi, return_counts=True)
    is_binom = kind == BINOM_MIX

    if K == 1:
        # closed-form single-component MLE
        m = vi.mean()
        if is_binom:
            fam = binom_mixture_family(p_trials, [1.0], [min(max(m / p_trials, 1e-12), 1 - 1e-12)])
        else:
            fam = pois_mixture_family([1.0], [max(m, 1e-12)])
        ll = float(cnts @ fam.logpmf[vals - fam.support[0]])
        return CountModelFit(fam, ll, int(vi.size), True, np.array([ll]))

    ss = np.random.SeedSequence(seed)
    best = None
    for restart, child in enumerate(ss.spawn(n_restarts)):
        rng = np.random.default_rng(child)
        theta, w = _quantile_spread_init(vi, K, p_trials, kind, rng)
        trace, n_used, status = _solvers.em_count_mixture(
            vals.astype(np.float64), cnts.astype(np.float64), float(p_trials),
            theta, w, is_binom, 500, 1e-9
        )
        if trace.size == 0:
            continue
        ll = float(trace[-1])
        cand = (ll, -restart, theta.copy(), w.copy(), trace.copy(), status)
        if status != 2 and (best is None or ll > best[0] + 1e-12):
            best = cand
    if best is None:
        raise NonConvergence("every EM restart collapsed a component")
    ll, _, theta, w, trace, status = best
    w = w / w.sum()
    order = np.argsort(theta, kind="stable")
    theta, w = theta[order], w[order]
    if is_binom:
        fam = binom_mixture_family(p_trials, w, theta)
    else:
        fam = pois_mixture_family(w, theta)
    return CountModelFit(fam, ll, int(vi.size), status == 0, trace)


def select_order(data, kind: str, p_trials: int, K_max: int, seed: int = 0) -> int:
    """Mixture order selection.

    Binomial mixtures: penalized-likelihood (BIC with 2K-1 parameters
    per K-component model) minimized over identifiable orders, used as
    a stand-in for the singular-BIC criterion. Poisson mixtures:
    sequential likelihood ratio tests of K vs K+1 calibrated by a
    parametric bootstrap with 199 replicates at level 0.05, stopping at
    the first non-rejection.
    """
    if K_max < 1:
        raise InvalidParameter("K_max must be >= 1")
    vi = _validated_counts(data, p_trials, kind)
    n = vi.size
    if kind == BINOM_MIX:
        K_cap = min(K_max, (p_trials + 1) // 2)
        best_K, best_bic = 1, np.inf
        for K in range(1, K_cap + 1):
            fit = fit_mixture_em(vi, K, kind, p_trials, seed=seed)
            bic = -2.0 * fit.loglik + (2 * K - 1) * math.log(n)
            if bic < best_bic - 1e-9:
                best_K, best_bic = K, bic
        return best_K
    if kind != POIS_MIX:
        raise InvalidParameter("order selection applies to the mixture families")
    vals, cnts = np.unique(vi, return_counts=True)
    return int(
        _solvers.pois_lrt_select_order(
            vals.astype(np.float64), cnts.astype(np.float64), K_max, seed % (2**31 - 1)
        )
    )


def fit_family(data, kind: str, p_trials: int, seed: int = 0, K_max: int = 3) -> CountModelFit:
    """Fit any family by name; mixtures select their order first."""
    if kind in (CMB, CMP, BB, GP):
        return fit_mle(data, kind, p_trials)
    K = select_order(data, kind, p_trials, K_max=K_max, seed=seed)
    return fit_mixture_em(data, K, kind, p_trials, seed=seed)


def kl_divergence(truth: CountFamily, approx: CountFamily) -> float:
    """KL(truth || approx) over the truth's support; +inf if the
    approximation misses mass where the truth has some."""
    out = 0.0
    p = truth.pmf_vector()
    for k, pk in zip(truth.support, p):
        if pk <= 0:
            continue
        if k < approx.support[0] or k > approx.support[-1]:
            return np.inf
        qk = approx.logpmf[k - approx.support[0]]
        out += pk * (math.log(pk) - qk)
    return float(out)
