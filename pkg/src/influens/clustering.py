"""First-stage split of the observations into a candidate-influential
set and a clean set, via spectral clustering of per-observation
outlyingness features.

Raw row distances in p+1 dimensions drown a shift confined to the
response or to a handful of columns, so each observation is reduced to
robust outlyingness scores first: a pilot-fit residual score (linear
model only) and a predictor-magnitude score. Both are robust z-scores,
hence comparable in scale; spectral clustering then splits cleanly
whenever either data side carries contamination. For the logistic model
only the predictor score is used (contamination is assumed to enter the
predictors there). The smaller of the two clusters is labelled as the
candidate set: influential points are expected to be a minority.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import pdist, squareform

from .data import Dataset, IndexSet, Selector, Task
from .errors import DegenerateResponse, InvalidParameter, NumericalError
from .selectors import SelectorSpec, cross_validate, fit_path


@dataclass(frozen=True)
class Partition:
    """Disjoint candidate/clean split covering all n observations."""

    s_infl: IndexSet
    s_clean: IndexSet

    def __post_init__(self):
        n = self.s_infl.n
        if self.s_clean.n != n:
            raise InvalidParameter("index sets refer to different n")
        if len(self.s_clean) == 0:
            raise InvalidParameter("clean set must be non-empty")
        union = np.union1d(self.s_infl.indices, self.s_clean.indices)
        if np.intersect1d(self.s_infl.indices, self.s_clean.indices).size:
            raise InvalidParameter("candidate and clean sets overlap")
        if union.size != n:
            raise InvalidParameter("partition must cover every observation")


def _robust_scale(col):
    med = np.median(col)
    mad = np.median(np.abs(col - med)) * 1.4826
    if mad > 1e-12:
        return med, mad
    sd = col.std()
    if sd > 1e-12:
        return med, sd
    return med, 1.0


def _robust_standardize(M):
    out = np.empty_like(M, dtype=np.float64)
    for j in range(M.shape[1]):
        med, sc = _robust_scale(M[:, j])
        out[:, j] = (M[:, j] - med) / sc
    return out


def _relaxed_predictor(train: Dataset, spec, lam):
    """Lasso for support selection, OLS refit on that support.

    The refit drops the lasso shrinkage bias, which otherwise dominates
    out-of-fold prediction noise at these sample sizes. Falls back to
    the lasso coefficients when the support is too rich for OLS.
    """
    fit = fit_path(train, spec, lam)
    sup = np.flatnonzero(fit.support)
    if 0 < sup.size <= max(train.n - 10, 2):
        Z = np.column_stack([np.ones(train.n), train.X[:, sup]])
        coef, *_ = np.linalg.lstsq(Z, train.y, rcond=None)
        intercept, beta_sup = coef[0], coef[1:]
        beta = np.zeros(train.p)
        beta[sup] = beta_sup
        return intercept, beta
    return fit.intercept, fit.beta


def _out_of_fold_residuals(data: Dataset, spec, lam, seed, folds=10):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    oof = np.empty(data.n)
    for block in np.array_split(perm, folds):
        mask = np.ones(data.n, dtype=bool)
        mask[block] = False
        b0, beta = _relaxed_predictor(data.subset(np.flatnonzero(mask)), spec, lam)
        oof[block] = data.y[block] - b0 - data.X[block] @ beta
    return oof


def _pilot_residual(data: Dataset, seed: int):
    """Out-of-sample residuals from a twice-trimmed pilot fit.

    An in-sample fit with p >> n can absorb an outlying response into
    quasi-indicator columns, hiding it from its own residual, so no row
    is ever scored by a fit that trained on it: trimming starts from
    out-of-fold residuals, drops the worst 20%, refits out-of-fold on
    the kept rows (excluded rows are scored by the kept-data fit, which
    never saw them), and repeats once.
    """
    spec = SelectorSpec(selector=Selector.LASSO)
    n = data.n
    n_keep = n - int(np.ceil(0.2 * n))
    try:
        lam, _ = cross_validate(data, spec, seed)
        resid = _out_of_fold_residuals(data, spec, lam, seed)
        for it in range(2):
            dev = np.abs(resid - np.median(resid))
            keep = np.sort(np.argsort(dev, kind="stable")[:n_keep])
            kept = data.subset(keep)
            # re-tune on the kept rows: the contaminated-data penalty
            # level is badly sized and inflates out-of-fold noise
            lam_k, _ = cross_validate(kept, spec, seed + 17 * (it + 1))
            fit_k = fit_path(kept, spec, lam_k)
            resid = data.y - fit_k.intercept - data.X @ fit_k.beta
            resid[keep] = _out_of_fold_residuals(kept, spec, lam_k, seed + it + 1)
        return resid
    except (NumericalError, DegenerateResponse):
        return data.y - data.y.mean()


def _robust_z(col):
    """Deviations over a trimmed-quantile scale.

    The scale is the 40th percentile of the absolute deviations,
    rescaled to match the normal (P(|Z| <= 0.5244) = 0.4), so a 20%
    block of shifted values cannot inflate it the way it inflates the
    plain MAD.
    """
    med = np.median(col)
    dev = col - med
    sc = np.quantile(np.abs(dev), 0.4) / 0.5244
    if sc <= 1e-12:
        _, sc = _robust_scale(col)
    return dev / sc


def _predictor_scan_score(X):
    """Multi-scale scan statistic of the robust column z-scores.

    For window widths 1, 4 and 16, take each row's largest absolute
    windowed mean, calibrate that statistic across rows by a robust
    z-score, and keep the largest scale's verdict. Row-ensemble
    calibration absorbs whatever between-column correlation the data
    carries; the wider windows pick up shifts spread over a run of
    columns long before any single cell looks extreme.
    """
    Zs = _robust_standardize(X)
    p = X.shape[1]
    score = np.full(X.shape[0], -np.inf)
    cs = np.cumsum(np.concatenate([np.zeros((X.shape[0], 1)), Zs], axis=1), axis=1)
    for w in (1, 4, 16):
        if w > p:
            continue
        means = (cs[:, w:] - cs[:, :-w]) / w
        stat = np.abs(means).max(axis=1)
        score = np.maximum(score, _robust_z(stat))
    return score


def _feature_matrix(data: Dataset, seed: int):
    x_out = _predictor_scan_score(data.X)
    if data.task is Task.LINEAR:
        r_out = _robust_z(_pilot_residual(data, seed))
        return np.column_stack([r_out, x_out])
    return x_out[:, None]


def _kmeans2(E, seed, n_restarts=9):
    """2-means on embedded rows: furthest-pair init plus seeded restarts."""
    n = E.shape[0]
    d2 = squareform(pdist(E, "sqeuclidean"))
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    inits = [np.array([i, j])]
    rng = np.random.default_rng(seed)
    for _ in range(n_restarts):
        inits.append(rng.choice(n, size=2, replace=False))
    best_labels, best_inertia = None, np.inf
    for init in inits:
        centers = E[init].copy()
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(100):
            dist = ((E[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = np.argmin(dist, axis=1)
            for c in range(2):
                if not np.any(new_labels == c):
                    far = np.argmax(dist[np.arange(n), new_labels])
                    new_labels[far] = c
            if np.array_equal(new_labels, labels):
                labels = new_labels
                break
            labels = new_labels
            for c in range(2):
                centers[c] = E[labels == c].mean(axis=0)
        dist = ((E - centers[labels]) ** 2).sum(axis=1)
        inertia = dist.sum()
        if inertia < best_inertia - 1e-12:
            best_inertia = inertia
            best_labels = labels
    return best_labels


def _fallback_partition(F, n):
    """Largest robust z-distances become the candidate set."""
    d = (F**2).sum(axis=1)
    k = int(np.ceil(0.2 * n))
    order = np.argsort(-d, kind="stable")
    infl0 = _gate(F, np.sort(order[:k]))
    mask = np.ones(n, dtype=bool)
    mask[infl0] = False
    clean0 = np.flatnonzero(mask)
    return Partition(
        IndexSet.from_zero_based(infl0, n), IndexSet.from_zero_based(clean0, n)
    )


OUTLYINGNESS_GATE = 2.5


def _gate(F, idx0):
    """Keep candidate rows that are actually outlying in some feature.

    A homogeneous cloud still gets split in two by 2-means; rows of the
    smaller cluster that sit inside the robust bulk (all |z| below the
    gate) are not credible influence candidates and are returned to the
    clean side. On clean data the candidate set is typically empty.
    """
    score = np.abs(F[idx0]).max(axis=1)
    return idx0[score >= OUTLYINGNESS_GATE]


def spectral_partition(data: Dataset, seed: int) -> Partition:
    """Two-way spectral split; the smaller cluster, gated on robust
    outlyingness, is the candidate set.

    Gaussian-kernel affinity with bandwidth set to the median pairwise
    distance, normalized Laplacian, two-dimensional embedding, seeded
    2-means. Falls back to a robust-distance split when the spectral
    pipeline degenerates.
    """
    n = data.n
    if n < 4:
        raise InvalidParameter("need at least 4 observations to partition")
    F = _feature_matrix(data, seed)
    dists = pdist(F)
    h = np.median(dists)
    if not np.isfinite(h) or h <= 0:
        return _fallback_partition(F, n)
    W = np.exp(-squareform(dists) ** 2 / (2.0 * h * h))
    np.fill_diagonal(W, 0.0)
    deg = W.sum(axis=1)
    if np.any(deg <= 1e-300):
        return _fallback_partition(F, n)
    dinv = 1.0 / np.sqrt(deg)
    L = W * dinv[:, None] * dinv[None, :]
    _, vecs = eigh(L, subset_by_index=(n - 2, n - 1))
    for c in range(vecs.shape[1]):
        top = np.argmax(np.abs(vecs[:, c]))
        if vecs[top, c] < 0:
            vecs[:, c] = -vecs[:, c]
    norms = np.linalg.norm(vecs, axis=1)
    norms[norms == 0] = 1.0
    E = vecs / norms[:, None]
    labels = _kmeans2(E, seed)
    size0 = int(np.sum(labels == 0))
    size1 = n - size0
    if size0 == 0 or size1 == 0:
        return _fallback_partition(F, n)
    if size0 < size1:
        small = 0
    elif size1 < size0:
        small = 1
    else:
        centroid = F.mean(axis=0)
        d_to_grand = ((F - centroid) ** 2).sum(axis=1)
        small = int(
            np.mean(d_to_grand[labels == 1]) > np.mean(d_to_grand[labels == 0])
        )
    infl0 = _gate(F, np.flatnonzero(labels == small))
    mask = np.ones(n, dtype=bool)
    mask[infl0] = False
    clean0 = np.flatnonzero(mask)
    return Partition(
        IndexSet.from_zero_based(infl0, n), IndexSet.from_zero_based(clean0, n)
    )
