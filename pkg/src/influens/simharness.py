"""Simulation harness: data generation, perturbation models, and
power / false-positive-rate scoring of the detectors.

Rows of the design are drawn from a first-order autoregressive Gaussian
so that cov(X_i, X_j) = rho^|i-j| exactly; responses come from the
linear model with unit noise or the logit link. Contamination is an
additive mean shift applied to the first n_infl observations: to the
response (scaled by the noise sd), to the first ten predictors, or to
both; the logistic variant shifts the predictors only and the response
keeps its clean-model draw.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .data import Dataset, Selector, Task, validate_dataset
from .detection import (
    ALL_BACKENDS,
    DetectionResult,
    clusmip_sweep,
    detect_dflasso,
    detect_him,
    detect_mip,
)
from .errors import InfluensError, InvalidParameter
from .selectors import SelectorSpec

PERT_I_Y = "I_Y"
PERT_II_X = "II_X"
PERT_III_XY = "III_XY"
PERT_LOGISTIC_X = "Logistic_X"
PERTURBATIONS = (PERT_I_Y, PERT_II_X, PERT_III_XY, PERT_LOGISTIC_X)


@dataclass(frozen=True)
class BetaSpec:
    """Sparse coefficient layout: s leading coordinates of equal value."""

    s: int = 5
    value: float = 1.5

    def vector(self, p):
        if self.s > p:
            raise InvalidParameter("more nonzeros than coordinates")
        beta = np.zeros(p)
        beta[: self.s] = self.value
        return beta


@dataclass(frozen=True)
class SimConfig:
    n: int = 50
    p: int = 200
    rho: float = 0.5
    task: Task = Task.LINEAR
    beta_true: BetaSpec = field(default_factory=BetaSpec)
    n_infl: int = 10
    perturbation: str = PERT_I_Y
    kappa: float = 5.0
    n_pert_cols: int = 10
    noise_sd: float = 1.0
    n_reps: int = 100
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.task, str):
            object.__setattr__(self, "task", Task(self.task.lower()))
        if not 0 <= self.rho < 1:
            raise InvalidParameter("rho must lie in [0, 1)")
        if not 0 <= self.n_infl < self.n:
            raise InvalidParameter("n_infl must be smaller than n")
        if self.kappa < 0:
            raise InvalidParameter("kappa must be nonnegative")
        if self.perturbation not in PERTURBATIONS:
            raise InvalidParameter(f"unknown perturbation {self.perturbation!r}")
        if self.perturbation == PERT_LOGISTIC_X and self.task is not Task.LOGISTIC:
            raise InvalidParameter("Logistic_X requires the logistic task")
        if self.perturbation != PERT_LOGISTIC_X and self.task is Task.LOGISTIC:
            raise InvalidParameter("logistic runs use the Logistic_X perturbation")


def generate_design(n, p, rho, seed):
    """AR(1) rows: X_1 ~ N(0,1), X_j = rho X_{j-1} + sqrt(1-rho^2) eps."""
    if not 0 <= abs(rho) < 1:
        raise InvalidParameter("|rho| must be < 1")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = eps[:, 0]
    c = math.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        X[:, j] = rho * X[:, j - 1] + c * eps[:, j]
    return X


def generate_outcome(X, beta, task, seed, noise_sd=1.0):
    """Linear: y = X beta + noise; logistic: Bernoulli(logit^-1(X beta))."""
    rng = np.random.default_rng(seed)
    eta = X @ np.asarray(beta, dtype=np.float64)
    if Task(task) is Task.LINEAR:
        return eta + noise_sd * rng.standard_normal(X.shape[0])
    prob = 1.0 / (1.0 + np.exp(-eta))
    return (rng.random(X.shape[0]) < prob).astype(np.float64)


def perturb(dataset: Dataset, config: SimConfig) -> Dataset:
    """Contaminate the first n_infl observations per the config."""
    y = dataset.y.copy()
    X = dataset.X.copy()
    k = config.n_infl
    if config.perturbation in (PERT_I_Y, PERT_III_XY):
        y[:k] += config.kappa * config.noise_sd
    if config.perturbation in (PERT_II_X, PERT_III_XY, PERT_LOGISTIC_X):
        X[:k, : config.n_pert_cols] += config.kappa
    return validate_dataset(y, X, dataset.task)


def simulate_dataset(config: SimConfig, rep: int) -> Dataset:
    """One replicate's contaminated dataset (clean draw, then shift)."""
    ss = np.random.SeedSequence(config.seed, spawn_key=(rep,))
    s_design, s_outcome = ss.spawn(2)
    X = generate_design(config.n, config.p, config.rho, s_design)
    beta = config.beta_true.vector(config.p)
    y = generate_outcome(X, beta, config.task, s_outcome, config.noise_sd)
    clean = validate_dataset(y, X, config.task)
    return perturb(clean, config)


def _flags_of(result: DetectionResult):
    return set(result.flagged.tolist())


def score_flags(flags, n, n_infl):
    """(power, fpr) of a flag set against the leading-block truth."""
    true = set(range(1, n_infl + 1))
    power = len(flags & true) / n_infl if n_infl else 0.0
    fpr = len(flags - true) / (n - n_infl) if n > n_infl else 0.0
    return power, fpr


def _one_replicate(config: SimConfig, rep, detectors, backends, alpha, mip_opts):
    ss = np.random.SeedSequence(config.seed, spawn_key=(rep,))
    det_seed = int(ss.generate_state(3)[2])
    data = simulate_dataset(config, rep)
    rows = []
    for det in detectors:
        try:
            if det.startswith("clusmip"):
                sel = Selector(det.split("(", 1)[1].rstrip(")"))
                sweep = clusmip_sweep(
                    data, SelectorSpec(selector=sel), backends=backends,
                    alpha=alpha, seed=det_seed,
                )
                for b, res in sweep.items():
                    pw, fp = score_flags(_flags_of(res), config.n, config.n_infl)
                    rows.append((det, b, rep, pw, fp, ""))
            elif det == "dflasso":
                res = detect_dflasso(data, seed=det_seed)
                pw, fp = score_flags(_flags_of(res), config.n, config.n_infl)
                rows.append((det, "", rep, pw, fp, ""))
            elif det == "him":
                res = detect_him(data, alpha=alpha)
                pw, fp = score_flags(_flags_of(res), config.n, config.n_infl)
                rows.append((det, "", rep, pw, fp, ""))
            elif det == "mip":
                res = detect_mip(data, alpha=alpha, seed=det_seed, **mip_opts)
                pw, fp = score_flags(_flags_of(res), config.n, config.n_infl)
                rows.append((det, "", rep, pw, fp, ""))
            else:
                raise InvalidParameter(f"unknown detector {det!r}")
        except InfluensError as exc:
            rows.append((det, "", rep, np.nan, np.nan, f"{type(exc).__name__}: {exc}"))
    return rows


@dataclass(frozen=True)
class PowerReport:
    """Long-format rows and their aggregation."""

    rows: list
    config: SimConfig

    def aggregate(self):
        """Per (detector, backend): mean power/fpr with Monte Carlo se."""
        cells = {}
        for det, b, rep, pw, fp, err in self.rows:
            cells.setdefault((det, b), []).append((pw, fp, err))
        out = []
        for (det, b), vals in sorted(cells.items()):
            arr = np.array([(p, f) for p, f, e in vals if not e], dtype=np.float64)
            n_fail = sum(1 for _, _, e in vals if e)
            if arr.size == 0:
                out.append({"detector": det, "backend": b, "kappa": self.config.kappa,
                            "power": np.nan, "power_se": np.nan, "fpr": np.nan,
                            "fpr_se": np.nan, "n_reps": 0, "n_failed": n_fail})
                continue
            mc = arr.std(axis=0, ddof=1) / math.sqrt(arr.shape[0]) if arr.shape[0] > 1 else np.zeros(2)
            out.append({
                "detector": det, "backend": b, "kappa": self.config.kappa,
                "power": float(arr[:, 0].mean()), "power_se": float(mc[0]),
                "fpr": float(arr[:, 1].mean()), "fpr_se": float(mc[1]),
                "n_reps": int(arr.shape[0]), "n_failed": n_fail,
            })
        return out


def default_threads():
    env = os.environ.get("INFLUENS_THREADS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def run_experiment(
    config: SimConfig,
    detectors=("clusmip(slasso)",),
    backends=ALL_BACKENDS,
    alpha: float = 0.05,
    n_jobs: int | None = None,
    mip_opts: dict | None = None,
) -> PowerReport:
    """n_reps independent replicates, each scored per (detector, backend).

    Replicates use per-replicate spawned seeds, so results are invariant
    to execution order and to the worker count.
    """
    n_jobs = n_jobs or default_threads()
    mip_opts = mip_opts or {}
    work = Parallel(n_jobs=n_jobs, prefer="processes")(
        delayed(_one_replicate)(config, rep, tuple(detectors), tuple(backends), alpha, mip_opts)
        for rep in range(config.n_reps)
    )
    rows = [r for chunk in work for r in chunk]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return PowerReport(rows=rows, config=config)


def rows_to_csv(report: PowerReport, path):
    with open(path, "w") as fh:
        fh.write("detector,backend,kappa,rep,power,fpr,error\n")
        for det, b, rep, pw, fp, err in report.rows:
            pw_s = "" if not np.isfinite(pw) else f"{pw:.6f}"
            fp_s = "" if not np.isfinite(fp) else f"{fp:.6f}"
            fh.write(f"{det},{b},{report.config.kappa},{rep},{pw_s},{fp_s},{err}\n")


def aggregate_to_csv(aggregates, path):
    cols = ["detector", "backend", "kappa", "power", "power_se", "fpr", "fpr_se",
            "n_reps", "n_failed"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in aggregates:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")


def summary_json(aggregates, config: SimConfig, path):
    doc = {
        "config": {
            "n": config.n, "p": config.p, "rho": config.rho,
            "task": config.task.value, "n_infl": config.n_infl,
            "perturbation": config.perturbation, "kappa": config.kappa,
            "n_reps": config.n_reps, "seed": config.seed,
        },
        "cells": aggregates,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=float)
    return doc
