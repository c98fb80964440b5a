"""Penalized regression selectors: lasso, scaled lasso, SCAD, MCP.

Predictors are standardized internally (mean 0, unit population sd) and
the intercept is unpenalized; coefficients are reported back on the
original scale. Fits are pure functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _solvers
from .data import Dataset, Selector, SelectionFit, Task
from .errors import (
    FoldDegeneracy,
    InvalidParameter,
    NonConvergence,
    ZeroResidual,
)

_PEN_CODE = {
    Selector.LASSO: _solvers.PEN_LASSO,
    Selector.SLASSO: _solvers.PEN_LASSO,
    Selector.SCAD: _solvers.PEN_SCAD,
    Selector.MCP: _solvers.PEN_MCP,
}

_DEFAULT_SHAPE = {Selector.SCAD: 3.7, Selector.MCP: 3.0}


@dataclass(frozen=True)
class SelectorSpec:
    """Configuration of a selector run."""

    selector: Selector = Selector.LASSO
    penalty_shape: float | None = None
    lambda_grid: np.ndarray | None = None
    cv_folds: int = 10
    max_iter: int = 10000
    tol: float = 1e-7

    def __post_init__(self):
        if isinstance(self.selector, str):
            object.__setattr__(self, "selector", Selector(self.selector.lower()))
        shape = self.effective_shape
        if self.selector is Selector.SCAD and shape <= 2.0:
            raise InvalidParameter("SCAD shape must exceed 2")
        if self.selector is Selector.MCP and shape <= 1.0:
            raise InvalidParameter("MCP shape must exceed 1")
        if self.lambda_grid is not None:
            grid = np.asarray(self.lambda_grid, dtype=np.float64)
            if grid.ndim != 1 or grid.size == 0:
                raise InvalidParameter("lambda grid must be a non-empty vector")
            if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
                raise InvalidParameter("lambda grid must be strictly decreasing and positive")
            object.__setattr__(self, "lambda_grid", grid)
        if self.cv_folds < 2:
            raise InvalidParameter("need at least 2 CV folds")
        if self.tol <= 0:
            raise InvalidParameter("tol must be positive")

    @property
    def effective_shape(self) -> float:
        if self.penalty_shape is not None:
            return float(self.penalty_shape)
        return _DEFAULT_SHAPE.get(self.selector, 0.0)

    def with_selector(self, selector) -> "SelectorSpec":
        return replace(self, selector=selector, penalty_shape=None)


def _standardized_parts(data: Dataset):
    """(XT standardized (p,n), sds, means, ybar) for kernel consumption."""
    sds = np.where(data.col_sds > 0, data.col_sds, 1.0)
    Xs = (data.X - data.col_means) / sds
    XT = np.ascontiguousarray(Xs.T)
    return XT, sds, data.col_means, float(data.y.mean())


def lambda_max(data: Dataset) -> float:
    """Smallest lambda at which the lasso fit is the null model."""
    XT, _, _, ybar = _standardized_parts(data)
    score = XT @ (data.y - ybar) / data.n
    return float(max(np.max(np.abs(score)), 1e-10))


def default_lambda_grid(data: Dataset, n_points: int = 50, ratio: float = 0.01):
    """Log-spaced grid from lambda_max down to ratio * lambda_max."""
    lmax = lambda_max(data)
    return np.geomspace(lmax, ratio * lmax, n_points)


def default_lam0_grid(data: Dataset, n_points: int = 30):
    """lambda0 grid for the scaled lasso: a log window around the
    universal level. Values far below it drive the alternation into
    interpolation; values far above it never select anything."""
    lam0 = universal_lam0(data.n, data.p)
    return lam0 * np.geomspace(4.0, 0.25, n_points)


def _warm_standardized(warm_start, sds, p):
    if warm_start is None:
        return np.zeros(p)
    beta = np.asarray(warm_start, dtype=np.float64)
    if beta.shape != (p,):
        raise InvalidParameter("warm start has wrong length")
    return beta * sds


def _finish_fit(beta_std, b0_std, data, sds, selector, lam, n_iter, sigma_hat=None):
    beta = beta_std / sds
    beta[data.col_sds == 0] = 0.0
    intercept = b0_std - float(beta @ data.col_means)
    support = (beta != 0.0).astype(np.int8)
    return SelectionFit(
        beta=beta,
        support=support,
        lam=float(lam),
        selector=selector,
        intercept=intercept,
        sigma_hat=sigma_hat,
        n_iter=int(n_iter),
    )


def fit_path(data: Dataset, spec: SelectorSpec, lam: float, warm_start=None) -> SelectionFit:
    """Fit the spec's selector at a single penalty level.

    Coordinate descent to a stationary point: every coordinate satisfies
    its subgradient/firm-threshold condition within tol, zeros are exact.
    Raises NonConvergence with the last iterate if the sweep cap is hit.
    """
    if lam <= 0:
        raise InvalidParameter("lambda must be positive")
    if spec.selector is Selector.SLASSO:
        raise InvalidParameter("use fit_scaled_lasso for the scaled lasso")
    if data.task is Task.LOGISTIC and spec.selector not in (
        Selector.LASSO,
        Selector.SCAD,
        Selector.MCP,
    ):
        raise InvalidParameter(f"{spec.selector} not supported for logistic fits")
    XT, sds, _, ybar = _standardized_parts(data)
    beta = _warm_standardized(warm_start, sds, data.p)
    pen = _PEN_CODE[spec.selector]
    if data.task is Task.LINEAR:
        yc = data.y - ybar
        n_iter, ok = _solvers.cd_linear(
            XT, yc, beta, lam, pen, spec.effective_shape, spec.tol, spec.max_iter
        )
        b0 = ybar
    else:
        b0_arr = np.array([np.log(ybar / (1.0 - ybar))])
        n_iter, ok = _solvers.cd_logistic(
            XT, data.y, beta, b0_arr, lam, pen, spec.effective_shape, spec.tol, spec.max_iter
        )
        b0 = float(b0_arr[0])
    if not ok:
        raise NonConvergence(
            f"{spec.selector.value} did not converge in {spec.max_iter} sweeps",
            last_iterate=beta / sds,
        )
    return _finish_fit(beta, b0, data, sds, spec.selector, lam, n_iter)


def universal_lam0(n: int, p: int) -> float:
    return float(np.sqrt(2.0 * np.log(p) / n))


def fit_scaled_lasso(data: Dataset, spec: SelectorSpec, lam0: float | None = None,
                     warm_start=None) -> SelectionFit:
    """Scaled lasso: alternate noise-scale estimation and lasso fits.

    sigma_hat <- ||y - X beta||_2 / sqrt(n); lambda <- lambda0 * sigma_hat,
    iterated until sigma_hat is stable. lambda0 defaults to the universal
    level sqrt(2 log p / n); a CV-chosen value may be supplied instead.
    """
    if data.task is not Task.LINEAR:
        raise InvalidParameter("scaled lasso applies to the linear model only")
    XT, sds, _, ybar = _standardized_parts(data)
    yc = data.y - ybar
    n, p = data.n, data.p
    if lam0 is None:
        lam0 = universal_lam0(n, p)
    if lam0 <= 0:
        raise InvalidParameter("lambda0 must be positive")
    beta = _warm_standardized(warm_start, sds, p)
    sigma, lam, ok, degenerate = _solvers.slasso_scale_alternation(
        XT, yc, beta, lam0, spec.tol, spec.max_iter, spec.tol
    )
    if degenerate:
        raise ZeroResidual("scaled lasso residual underflowed (interpolating fit)")
    if not ok:
        raise NonConvergence("scaled lasso alternation did not stabilize",
                             last_iterate=beta / sds)
    return _finish_fit(beta, ybar, data, sds, Selector.SLASSO, lam, 0,
                       sigma_hat=float(sigma))


def _fold_assignment(n, cv_folds, rng):
    perm = rng.permutation(n)
    return np.array_split(perm, cv_folds)


def _valid_logistic_folds(y, folds):
    n = y.shape[0]
    for fold in folds:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        tr = y[mask]
        if tr.min() == tr.max():
            return False
    return True


def cross_validate(data: Dataset, spec: SelectorSpec, seed: int):
    """10-fold (by default) CV over the lambda grid.

    Folds are contiguous blocks of a seeded permutation. Loss is pooled
    mean squared error (linear) or pooled mean binomial deviance
    (logistic) over the held-out points. Ties go to the larger lambda.
    For the scaled lasso the grid entries act as lambda0 levels (the
    noise scale is re-estimated inside every fit). Returns
    (lambda_star, cv_curve).
    """
    n = data.n
    if n < spec.cv_folds:
        raise InvalidParameter("fewer observations than folds")
    if spec.lambda_grid is not None:
        grid = spec.lambda_grid
    elif spec.selector is Selector.SLASSO:
        grid = default_lam0_grid(data)
    else:
        grid = default_lambda_grid(data)
    folds = None
    for attempt in range(20):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,)))
        cand = _fold_assignment(n, spec.cv_folds, rng)
        if data.task is Task.LINEAR or _valid_logistic_folds(data.y, cand):
            folds = cand
            break
    if folds is None:
        raise FoldDegeneracy("could not build folds with both classes in every training set")

    pen = _PEN_CODE[spec.selector]
    shape = spec.effective_shape
    total = np.zeros(grid.size)
    for fold in folds:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        Xtr, ytr = data.X[mask], data.y[mask]
        mtr = Xtr.mean(axis=0)
        str_ = Xtr.std(axis=0)
        str_ = np.where(str_ > 0, str_, 1.0)
        XTtr = np.ascontiguousarray(((Xtr - mtr) / str_).T)
        Xval = (data.X[fold] - mtr) / str_
        yval = data.y[fold]
        if data.task is Task.LINEAR:
            ybar = ytr.mean()
            if spec.selector is Selector.SLASSO:
                # loose scale tolerance: plenty for a CV loss comparison
                betas = _solvers.slasso_path(
                    XTtr, ytr - ybar, grid, spec.tol, spec.max_iter, 1e-3
                )
            else:
                betas, _ = _solvers.linear_path(
                    XTtr, ytr - ybar, grid, pen, shape, spec.tol, spec.max_iter
                )
            pred = ybar + Xval @ betas.T
            total += np.sum((yval[:, None] - pred) ** 2, axis=0)
        else:
            betas, b0s, _ = _solvers.logistic_path(
                XTtr, ytr, grid, pen, shape, spec.tol, spec.max_iter
            )
            eta = b0s[None, :] + Xval @ betas.T
            # mean binomial deviance contribution, numerically safe
            ll = yval[:, None] * eta - np.logaddexp(0.0, eta)
            total += -2.0 * np.sum(ll, axis=0)
    curve = total / n
    lambda_star = float(grid[int(np.argmin(curve))])
    return lambda_star, curve


def select_and_fit(data: Dataset, spec: SelectorSpec, seed: int,
                   lam: float | None = None, warm_start=None):
    """CV (unless lam is given) then a full-data fit at the chosen level.

    For the scaled lasso the tuned quantity is lambda0 and the noise
    scale is re-estimated inside the fit. Returns the fit; the chosen
    level is fit.lam (lasso/SCAD/MCP) or the final lambda0*sigma_hat.
    """
    if lam is None:
        lam, _ = cross_validate(data, spec, seed)
    if spec.selector is Selector.SLASSO:
        return fit_scaled_lasso(data, spec, lam0=lam, warm_start=warm_start)
    return fit_path(data, spec, lam, warm_start=warm_start)
