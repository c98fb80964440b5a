"""Selection-influence profiles: how much the selected support moves
when one observation is removed from (or joined to) a reference set.

The per-observation count is the Hamming distance between the zero
patterns of two fits, so it lies in [0, p] and is always an integer.
Failed refits are recorded as missing instead of aborting the profile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, IndexSet, Selector
from .errors import (
    DegenerateResponse,
    DimensionMismatch,
    InvalidParameter,
    NumericalError,
)
from .selectors import SelectorSpec, cross_validate, fit_path, fit_scaled_lasso

LOO = "loo"
CLUSMIP = "clusmip"


def gdf_tau(full_support, loo_support) -> int:
    """Hamming distance between two selection supports."""
    a = np.asarray(full_support).ravel()
    b = np.asarray(loo_support).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch("support vectors differ in length")
    return int(np.sum((a != 0) != (b != 0)))


@dataclass(frozen=True)
class TauSequence:
    """Per-candidate selection-change counts with provenance.

    ``values[k]`` belongs to ``candidate_indices.indices[k]``; entries
    with ``missing[k]`` set come from refits that failed and carry 0 as
    a placeholder.
    """

    values: np.ndarray
    missing: np.ndarray
    selector: Selector
    base_indices: IndexSet
    candidate_indices: IndexSet
    p: int
    mode: str = LOO

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.int64)
        miss = np.asarray(self.missing, dtype=bool)
        if vals.shape != miss.shape:
            raise DimensionMismatch("values and missing mask differ in length")
        ok = vals[~miss]
        if ok.size and (ok.min() < 0 or ok.max() > self.p):
            raise InvalidParameter("counts must lie in [0, p]")
        vals.flags.writeable = False
        miss.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "missing", miss)

    def observed(self):
        """Counts from refits that succeeded."""
        return self.values[~self.missing]

    def __len__(self):
        return int(self.values.size)


@dataclass(frozen=True)
class XiMatrix:
    """Per-candidate support-flip indicators, one row per candidate."""

    xi: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=np.uint8)
        xi.flags.writeable = False
        object.__setattr__(self, "xi", xi)

    def row_sums(self):
        return self.xi.sum(axis=1, dtype=np.int64)


def _fit_subset(sub: Dataset, spec: SelectorSpec, lam, warm):
    if spec.selector is Selector.SLASSO:
        # lam plays the role of lambda0; sigma is re-estimated per subset
        return fit_scaled_lasso(sub, spec, lam0=lam, warm_start=warm)
    return fit_path(sub, spec, lam, warm_start=warm)


def gdf_profile(
    data: Dataset,
    spec: SelectorSpec,
    candidates: IndexSet | None = None,
    base: IndexSet | None = None,
    mode: str = LOO,
    seed: int = 0,
    lam: float | None = None,
    retune_per_deletion: bool = False,
):
    """Selection-change counts for each candidate observation.

    mode="loo": the reference fit uses every row; each candidate is
    removed in turn. mode="clusmip": the reference fit uses the ``base``
    rows only; each candidate is joined to the base in turn. The penalty
    level is chosen once on the reference set (unless ``lam`` is given
    or ``retune_per_deletion`` re-runs CV per refit); refits warm-start
    from the reference coefficients. Returns (TauSequence, XiMatrix).
    """
    n = data.n
    if mode not in (LOO, CLUSMIP):
        raise InvalidParameter(f"unknown mode {mode!r}")
    if mode == CLUSMIP:
        if base is None or candidates is None:
            raise InvalidParameter("clusmip mode needs explicit base and candidates")
        if np.intersect1d(candidates.indices, base.indices).size:
            raise InvalidParameter("candidates must be disjoint from the base")
        ref_rows0 = base.zero_based()
    else:
        if candidates is None:
            candidates = IndexSet(np.arange(1, n + 1), n)
        ref_rows0 = np.arange(n)
        base = IndexSet(np.arange(1, n + 1), n)

    cand0 = candidates.zero_based()
    m = cand0.size
    values = np.zeros(m, dtype=np.int64)
    missing = np.zeros(m, dtype=bool)
    xi = np.zeros((m, data.p), dtype=np.uint8)

    if m == 0:
        return (
            TauSequence(values, missing, spec.selector, base, candidates, data.p, mode),
            XiMatrix(xi, missing),
        )

    ref_data = data if mode == LOO else data.subset(ref_rows0)
    if lam is None:
        lam, _ = cross_validate(ref_data, spec, seed)
    ref_fit = _fit_subset(ref_data, spec, lam, None)
    full_support = ref_fit.support.astype(bool)
    # warm starts are safe for the convex (scaled) lasso; the nonconvex
    # selectors restart cold so every refit explores the same path as
    # the cold-started reference fit instead of its warm local basin
    warm = (
        ref_fit.beta
        if spec.selector in (Selector.LASSO, Selector.SLASSO)
        else None
    )

    for k, r in enumerate(cand0):
        if mode == LOO:
            rows = ref_rows0[ref_rows0 != r]
        else:
            rows = np.sort(np.append(ref_rows0, r))
        try:
            sub = data.subset(rows)
            lam_k = lam
            if retune_per_deletion and spec.selector is not Selector.SLASSO:
                sub_seed = int(
                    np.random.SeedSequence(seed, spawn_key=(int(r),)).generate_state(1)[0]
                )
                lam_k, _ = cross_validate(sub, spec, sub_seed)
            fit_k = _fit_subset(sub, spec, lam_k, warm)
        except (NumericalError, DegenerateResponse):
            missing[k] = True
            continue
        loo_support = fit_k.support.astype(bool)
        flips = full_support != loo_support
        xi[k] = flips.astype(np.uint8)
        values[k] = int(flips.sum())

    return (
        TauSequence(values, missing, spec.selector, base, candidates, data.p, mode),
        XiMatrix(xi, missing),
    )


def tau_to_csv(tau: TauSequence, path):
    """Dump a profile as CSV: observation index, count, missing flag."""
    with open(path, "w") as fh:
        fh.write("index,tau,missing\n")
        for idx, v, miss in zip(tau.candidate_indices.indices, tau.values, tau.missing):
            shown = "" if miss else str(int(v))
            fh.write(f"{int(idx)},{shown},{int(miss)}\n")


def xi_to_csv(xim: XiMatrix, path):
    np.savetxt(path, xim.xi, fmt="%d", delimiter=",")
