"""Detection procedures: the clustering-based two-stage detector and
the three baselines (leave-one-out lasso difference, marginal-correlation
measure, random-group-deletion min/max screening).

The two-stage detector partitions observations into candidate and clean
sets, then studies each candidate inside the merged set {candidate} +
clean: the leave-one-out selection-change profile of that merged set
supplies both the candidate's own count and the reference sample that
the chosen threshold backend is fitted to. A truly influential
candidate is (asymptotically) the only influential point of its merged
set, so its count lands far in the tail of that profile; a clean
candidate's count is exchangeable with the rest and crosses the
threshold with small probability.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from . import count_models as cm
from .bootstrap import BootstrapConfig, boot1_mean_upper, boot2_quantile, boot3_midquantile
from .clustering import Partition, spectral_partition
from .data import Dataset, IndexSet, Selector, Task
from .errors import (
    AllZeroData,
    InfluensError,
    InvalidParameter,
    NumericalError,
    ZeroSdColumn,
)
from .influence import CLUSMIP, LOO, TauSequence, XiMatrix, gdf_profile, gdf_tau
from .selectors import SelectorSpec, cross_validate
from .thresholds import ThresholdRule, clt_threshold, parametric_threshold

CLT = "clt"
PARAM_CMB = "param_cmb"
PARAM_CMP = "param_cmp"
PARAM_BB = "param_bb"
PARAM_GP = "param_gp"
PARAM_MB = "param_mb"
PARAM_MP = "param_mp"
BOOT1 = "boot1"
BOOT2 = "boot2"
BOOT3 = "boot3"

ALL_BACKENDS = (
    CLT, PARAM_CMB, PARAM_CMP, PARAM_BB, PARAM_GP, PARAM_MB, PARAM_MP,
    BOOT1, BOOT2, BOOT3,
)

_PARAM_KIND = {
    PARAM_CMB: cm.CMB,
    PARAM_CMP: cm.CMP,
    PARAM_BB: cm.BB,
    PARAM_GP: cm.GP,
    PARAM_MB: cm.BINOM_MIX,
    PARAM_MP: cm.POIS_MIX,
}


@dataclass(frozen=True)
class DetectionResult:
    """Flagged indices plus everything needed to audit the decision."""

    detector: str
    backend: str | None
    flagged: IndexSet
    statistic: np.ndarray
    rule: ThresholdRule
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        stat = [None if not np.isfinite(s) else float(s) for s in self.statistic]
        diag = {
            k: v
            for k, v in self.diagnostics.items()
            if k in ("candidates", "clean", "per_candidate_cutoff", "timings",
                     "n_missing", "notes", "mixture_order")
        }
        return {
            "detector": self.detector,
            "backend": self.backend,
            "flagged": self.flagged.tolist(),
            "statistic": stat,
            "rule": self.rule.to_dict(),
            "diagnostics": diag,
        }


def _sub_seed(seed, *key):
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def _candidate_profiles(data, spec, partition, lam, seed, max_null, retune):
    """Per-candidate leave-one-out profiles of the merged sets.

    Returns (tau, xi, profiles): ``tau`` holds each candidate's own
    count against the clean-base reference; ``profiles[k]`` is the full
    observed profile of merged set k (candidate's count included) that
    backends calibrate on. The number of leave-outs per merged set is
    capped at ``max_null`` by a seeded subsample.
    """
    n = data.n
    cand = partition.s_infl
    clean0 = partition.s_clean.zero_based()
    m = len(cand)
    values = np.zeros(m, dtype=np.int64)
    missing = np.zeros(m, dtype=bool)
    xi = np.zeros((m, data.p), dtype=np.uint8)
    profiles = []
    for k, i0 in enumerate(cand.zero_based()):
        rows = np.sort(np.append(clean0, i0))
        sub = data.subset(rows)
        pos_i = int(np.searchsorted(rows, i0))
        null_pos = np.delete(np.arange(rows.size), pos_i)
        if null_pos.size > max_null:
            rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(2, int(i0)))
            )
            null_pos = np.sort(rng.choice(null_pos, size=max_null, replace=False))
        members = np.sort(np.append(null_pos, pos_i)) + 1
        try:
            tau_sub, xi_sub = gdf_profile(
                sub,
                spec,
                candidates=IndexSet(members, rows.size),
                mode=LOO,
                seed=_sub_seed(seed, 3, int(i0)),
                lam=lam,
                retune_per_deletion=retune,
            )
        except (NumericalError, InvalidParameter):
            missing[k] = True
            profiles.append(np.empty(0, dtype=np.int64))
            continue
        where_i = int(np.searchsorted(members, pos_i + 1))
        if tau_sub.missing[where_i]:
            missing[k] = True
            profiles.append(tau_sub.observed())
            continue
        values[k] = tau_sub.values[where_i]
        xi[k] = xi_sub.xi[where_i]
        profiles.append(tau_sub.observed())
    tau = TauSequence(values, missing, spec.selector, partition.s_clean, cand,
                      data.p, CLUSMIP)
    return tau, XiMatrix(xi, missing), profiles


def _backend_rule(backend, profile, p_trials, alpha, seed, mixture_order=None):
    """Fit one threshold backend to one profile; returns a ThresholdRule."""
    zeta = 1.0 - alpha
    try:
        if backend == CLT:
            return clt_threshold(profile, alpha)
        if backend == BOOT1:
            cfg = BootstrapConfig(alpha_or_zeta=alpha, seed=seed)
            return boot1_mean_upper(profile, cfg)
        if backend == BOOT2:
            cfg = BootstrapConfig(alpha_or_zeta=zeta, seed=seed)
            return boot2_quantile(profile, cfg)
        if backend == BOOT3:
            cfg = BootstrapConfig(alpha_or_zeta=zeta, seed=seed)
            return boot3_midquantile(profile, cfg)
        kind = _PARAM_KIND[backend]
        if backend in (PARAM_MB, PARAM_MP):
            fit = cm.fit_mixture_em(profile, mixture_order, kind, p_trials, seed=seed)
        else:
            fit = cm.fit_mle(profile, kind, p_trials)
        return parametric_threshold(fit, zeta)
    except AllZeroData:
        # a profile of all-zero counts: any selection change is evidence
        return ThresholdRule(backend, 0.0, {"degenerate": "all_zero"})


def clusmip_sweep(
    data: Dataset,
    spec: SelectorSpec,
    backends=ALL_BACKENDS,
    alpha: float = 0.05,
    seed: int = 0,
    max_null_per_candidate: int = 40,
    retune_per_deletion: bool = False,
    mixture_k_max: int = 3,
) -> dict:
    """Run the two-stage detector once and threshold it with every
    requested backend; the selection-change profiles are computed once
    and shared. Returns {backend: DetectionResult}."""
    if data.task is Task.LOGISTIC and spec.selector is Selector.SLASSO:
        raise InvalidParameter("the scaled lasso variant applies to the linear model")
    t0 = time.perf_counter()
    partition = spectral_partition(data, seed=_sub_seed(seed, 0))
    clean_data = data.subset(partition.s_clean.zero_based())
    lam, _ = cross_validate(clean_data, spec, _sub_seed(seed, 1))
    t1 = time.perf_counter()
    tau, xi, profiles = _candidate_profiles(
        data, spec, partition, lam, seed, max_null_per_candidate, retune_per_deletion
    )
    t2 = time.perf_counter()
    cand_idx = tau.candidate_indices.indices
    n = data.n

    # mixture order chosen once per sweep on the pooled reference values
    pooled = np.concatenate([pr for pr in profiles if pr.size]) if profiles else np.empty(0)
    orders = {}
    for b in (PARAM_MB, PARAM_MP):
        if b in backends and pooled.size:
            try:
                orders[b] = cm.select_order(
                    pooled, _PARAM_KIND[b], data.p, K_max=mixture_k_max,
                    seed=_sub_seed(seed, 4),
                )
            except (InfluensError, ValueError):
                orders[b] = None

    statistic = np.full(n, np.nan)
    for k, idx in enumerate(cand_idx):
        if not tau.missing[k]:
            statistic[idx - 1] = tau.values[k]

    results = {}
    for b in backends:
        b_t0 = time.perf_counter()
        flags = []
        cutoffs = {}
        notes = []
        failed = False
        if b in (PARAM_MB, PARAM_MP) and pooled.size and orders.get(b) is None:
            failed = True
            notes.append("mixture order selection failed")
        if not failed:
            for k, idx in enumerate(cand_idx):
                if tau.missing[k] or profiles[k].size == 0:
                    continue
                try:
                    rule = _backend_rule(
                        b, profiles[k], data.p, alpha,
                        _sub_seed(seed, 5, ALL_BACKENDS.index(b), int(idx)),
                        mixture_order=orders.get(b),
                    )
                except InfluensError as exc:
                    notes.append(f"candidate {int(idx)}: {exc}")
                    continue
                cutoffs[int(idx)] = rule.cutoff
                if tau.values[k] > rule.cutoff:
                    flags.append(int(idx))
        med_cut = float(np.median(list(cutoffs.values()))) if cutoffs else np.inf
        headline = ThresholdRule(
            b, med_cut, {"alpha": alpha, "zeta": 1 - alpha, "per_candidate": True}
        )
        diagnostics = {
            "partition": partition,
            "tau": tau,
            "xi": xi,
            "profiles": profiles,
            "lambda": lam,
            "candidates": tau.candidate_indices.tolist(),
            "clean": partition.s_clean.tolist(),
            "per_candidate_cutoff": cutoffs,
            "n_missing": int(tau.missing.sum()),
            "notes": notes,
            "mixture_order": orders.get(b),
            "no_decision": failed,
            "timings": {
                "partition_cv_s": t1 - t0,
                "profiles_s": t2 - t1,
                "backend_s": time.perf_counter() - b_t0,
            },
        }
        results[b] = DetectionResult(
            detector=f"clusmip({spec.selector.value})",
            backend=b,
            flagged=IndexSet(np.array(flags, dtype=np.int64), n),
            statistic=statistic,
            rule=headline,
            diagnostics=diagnostics,
        )
    return results


def clusmip(data, spec, backend=BOOT1, alpha=0.05, seed=0, **kw) -> DetectionResult:
    """Two-stage detection with a single threshold backend."""
    return clusmip_sweep(data, spec, backends=(backend,), alpha=alpha, seed=seed, **kw)[backend]


def detect_dflasso(data: Dataset, spec: SelectorSpec | None = None, seed: int = 0) -> DetectionResult:
    """Leave-one-out lasso selection difference, standardized, |z| >= 2."""
    if data.n < 10:
        raise InvalidParameter("need at least 10 observations")
    spec = (spec or SelectorSpec()).with_selector(Selector.LASSO)
    tau, xi = gdf_profile(data, spec, mode=LOO, seed=seed)
    delta = tau.values.astype(np.float64)
    delta[tau.missing] = np.nan
    ok = ~tau.missing
    mean = float(delta[ok].mean()) if ok.any() else 0.0
    sd = float(delta[ok].std(ddof=1)) if ok.sum() > 1 else 0.0
    statistic = np.full(data.n, np.nan)
    flags = []
    if sd > 0:
        z = (delta - mean) / sd
        statistic[:] = z
        flags = [int(i + 1) for i in range(data.n) if ok[i] and abs(z[i]) >= 2.0]
    rule = ThresholdRule("dflasso_z", 2.0, {"mean": mean, "sd": sd})
    return DetectionResult(
        detector="dflasso",
        backend=None,
        flagged=IndexSet(np.array(flags, dtype=np.int64), data.n),
        statistic=statistic,
        rule=rule,
        diagnostics={"tau": tau, "xi": xi, "zero_variance": sd == 0.0},
    )


def _marginal_corr_stats(y, X):
    """Full-sample and leave-one-out marginal correlations.

    The leave-one-out estimator divides the deleted-case sums by n (not
    n-1) inside the means, as defined by its originating construction;
    variances use n-1 denominators around those means.
    """
    n, p = X.shape
    Sy, Syy = y.sum(), (y**2).sum()
    Sx = X.sum(axis=0)
    Sxx = (X**2).sum(axis=0)
    Sxy = X.T @ y
    # full-sample Pearson
    mu_x, mu_y = Sx / n, Sy / n
    sd_x = np.sqrt((Sxx - n * mu_x**2) / (n - 1))
    sd_y = np.sqrt((Syy - n * mu_y**2) / (n - 1))
    if sd_y <= 0 or np.any(sd_x <= 0):
        raise ZeroSdColumn("constant response or predictor column")
    rho = (Sxy - n * mu_x * mu_y) / ((n - 1) * sd_x * sd_y)
    # deleted-case versions; means divided by n
    mxj = (Sx[None, :] - X) / n
    myj = ((Sy - y) / n)[:, None]
    sxx = (Sxx[None, :] - X**2) - 2 * mxj * (Sx[None, :] - X) + (n - 1) * mxj**2
    syy = (Syy - y**2)[:, None] - 2 * myj * (Sy - y)[:, None] + (n - 1) * myj**2
    sxy = (Sxy[None, :] - X * y[:, None]) - mxj * (Sy - y)[:, None] \
        - myj * (Sx[None, :] - X) + (n - 1) * mxj * myj
    sx = np.sqrt(sxx / (n - 1))
    sy = np.sqrt(syy / (n - 1))
    if np.any(sx <= 0) or np.any(sy <= 0):
        raise ZeroSdColumn("constant predictor or response after deletion")
    rho_loo = sxy / ((n - 1) * sx * sy)
    return rho, rho_loo


def detect_him(data: Dataset, alpha: float = 0.05) -> DetectionResult:
    """Marginal-correlation influence: D_i = mean_j (rho_j - rho_j^(i))^2,
    flagged when n^2 D_i exceeds the chi-square(1) upper quantile."""
    if data.task is not Task.LINEAR:
        raise InvalidParameter("this detector applies to the linear model")
    rho, rho_loo = _marginal_corr_stats(data.y, data.X)
    D = ((rho[None, :] - rho_loo) ** 2).mean(axis=1)
    stat = data.n**2 * D
    cut = float(chi2.ppf(1 - alpha, df=1))
    flags = np.flatnonzero(stat > cut) + 1
    return DetectionResult(
        detector="him",
        backend=None,
        flagged=IndexSet(flags.astype(np.int64), data.n),
        statistic=stat,
        rule=ThresholdRule("chi2_1", cut, {"alpha": alpha}),
        diagnostics={"D": D},
    )


def detect_mip(
    data: Dataset,
    m_subsets: int = 100,
    subset_size: int | None = None,
    alpha: float = 0.05,
    seed: int = 0,
) -> DetectionResult:
    """Random-group-deletion screen.

    For each observation, the marginal-correlation statistic is
    recomputed inside m random subsets joined with that observation;
    the max over subsets is screened against a Bonferroni chi-square
    level and the min is confirmed against the plain level. Both must
    exceed their cutoffs for a flag.
    """
    if data.task is not Task.LINEAR:
        raise InvalidParameter("this detector applies to the linear model")
    n, p = data.n, data.p
    s = subset_size if subset_size is not None else n // 2
    if s + 1 > n:
        raise InvalidParameter("subset size too large")
    if s < 3:
        raise InvalidParameter("subset size too small")
    y, X = data.y, data.X
    X2 = X**2
    Xy = X * y[:, None]
    t_max = np.empty(n)
    t_min = np.empty(n)
    children = np.random.SeedSequence(seed).spawn(n)
    for i in range(n):
        rng = np.random.default_rng(children[i])
        others = np.delete(np.arange(n), i)
        subsets = np.empty((m_subsets, s), dtype=np.int64)
        for j in range(m_subsets):
            subsets[j] = rng.choice(others, size=s, replace=False)
        M = np.zeros((m_subsets, n))
        rows = np.repeat(np.arange(m_subsets), s)
        M[rows, subsets.ravel()] = 1.0
        M[:, i] = 1.0
        ns = s + 1
        Sy = M @ y
        Syy = M @ (y**2)
        Sx = M @ X
        Sxx = M @ X2
        Sxy = M @ Xy
        # full-subset correlations (with observation i)
        mux, muy = Sx / ns, (Sy / ns)[:, None]
        vx = (Sxx - ns * mux**2) / (ns - 1)
        vy = (Syy[:, None] - ns * muy**2) / (ns - 1)
        rho = (Sxy - ns * mux * muy) / ((ns - 1) * np.sqrt(vx * vy))
        # deleted-case correlations (means divided by ns)
        mxj = (Sx - X[i][None, :]) / ns
        myj = ((Sy - y[i]) / ns)[:, None]
        sxx = (Sxx - X2[i][None, :]) - 2 * mxj * (Sx - X[i][None, :]) + (ns - 1) * mxj**2
        syy = (Syy - y[i] ** 2)[:, None] - 2 * myj * (Sy - y[i])[:, None] + (ns - 1) * myj**2
        sxy = (Sxy - Xy[i][None, :]) - mxj * (Sy - y[i])[:, None] \
            - myj * (Sx - X[i][None, :]) + (ns - 1) * mxj * myj
        bad = (vx <= 0) | (vy <= 0) | (sxx <= 0) | (syy <= 0)
        if np.any(bad):
            raise ZeroSdColumn("constant column inside a random subset")
        rho_loo = sxy / np.sqrt(sxx * syy)
        D = ((rho - rho_loo) ** 2).mean(axis=1)
        stat = ns**2 * D
        t_max[i] = stat.max()
        t_min[i] = stat.min()
    screen = float(chi2.ppf(1 - alpha / n, df=1))
    confirm = float(chi2.ppf(1 - alpha, df=1))
    flags = np.flatnonzero((t_max > screen) & (t_min > confirm)) + 1
    return DetectionResult(
        detector="mip",
        backend=None,
        flagged=IndexSet(flags.astype(np.int64), data.n),
        statistic=t_min,
        rule=ThresholdRule(
            "mip_minmax", confirm,
            {"screen": screen, "m_subsets": m_subsets, "subset_size": s, "alpha": alpha},
        ),
        diagnostics={"t_max": t_max, "t_min": t_min},
    )
