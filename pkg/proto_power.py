"""Throwaway prototype: does the clusmip pipeline deliver paper-scale
power/FPR at desk scale? Not part of the package."""
import time
import numpy as np

from influens.data import validate_dataset, IndexSet, Selector, Task
from influens.selectors import SelectorSpec, cross_validate
from influens.influence import gdf_profile, LOO, CLUSMIP
from influens.clustering import spectral_partition
from influens.bootstrap import BootstrapConfig, boot1_mean_upper, boot2_quantile, boot3_midquantile
from influens.thresholds import clt_threshold


def gen_design(n, p, rho, rng):
    X = np.empty((n, p))
    X[:, 0] = rng.normal(size=n)
    for j in range(1, p):
        X[:, j] = rho * X[:, j-1] + np.sqrt(1-rho**2) * rng.normal(size=n)
    return X

def make_data(n, p, rho, task, kappa, perturb, seed, n_infl=10):
    ss = np.random.SeedSequence(seed)
    r1, r2 = [np.random.default_rng(c) for c in ss.spawn(2)]
    X = gen_design(n, p, rho, r1)
    beta = np.zeros(p); beta[:5] = 1.5
    if task == "linear":
        y = X @ beta + r2.normal(size=n)
    else:
        eta = X @ beta
        y = (r2.random(n) < 1/(1+np.exp(-eta))).astype(float)
    if perturb in ("I", "III"):
        y = y.copy(); y[:n_infl] += kappa
    if perturb in ("II", "III", "LX"):
        X = X.copy(); X[:n_infl, :10] += kappa
    return validate_dataset(y, X, task)

def run_rep(task, sel, perturb, kappa, seed, n=50, p=200, rho=0.5, n_infl=10):
    data = make_data(n, p, rho, task, kappa, perturb, seed, n_infl)
    part = spectral_partition(data, seed=seed+1)
    cand = part.s_infl; clean = part.s_clean
    true = set(range(1, n_infl+1))
    recall = len(true & set(cand.tolist())) / n_infl
    spec = SelectorSpec(selector=sel)
    clean_data = data.subset(clean.zero_based())
    lam = None
    if sel is not Selector.SLASSO:
        lam, _ = cross_validate(clean_data, spec, seed+2)
    # null profile: LOO on clean subset
    tau_null, _ = gdf_profile(clean_data, spec, mode=LOO, seed=seed+2, lam=lam)
    # candidate profile: add-in
    tau_cand, _ = gdf_profile(data, spec, candidates=cand, base=clean, mode=CLUSMIP, seed=seed+2, lam=lam)
    null_vals = tau_null.observed()
    res = {}
    cvals = tau_cand.values.astype(float)
    cmiss = tau_cand.missing
    for name, rule in [
        ("clt", clt_threshold(null_vals, 0.05)),
        ("boot1", boot1_mean_upper(null_vals, BootstrapConfig(B=500, alpha_or_zeta=0.05, seed=seed+3))),
        ("boot2", boot2_quantile(null_vals, BootstrapConfig(B=500, alpha_or_zeta=0.95, seed=seed+4))),
        ("boot3", boot3_midquantile(null_vals, BootstrapConfig(B=500, alpha_or_zeta=0.95, seed=seed+5))),
    ]:
        fl = rule.flags(cvals, cmiss)
        flagged = set(np.asarray(cand.indices)[fl].tolist())
        power = len(flagged & true)/n_infl
        fpr = len(flagged - true)/(n - n_infl)
        res[name] = (power, fpr)
    return recall, len(cand), null_vals, cvals[~cmiss], res


if __name__ == "__main__":
    for task, sel, perturb, kappas, n, p in [
        ("linear", Selector.SLASSO, "I", (5, 10, 30), 50, 200),
        ("linear", Selector.SLASSO, "II", (5,), 50, 200),
        ("linear", Selector.LASSO, "I", (5, 30), 50, 200),
        ("logistic", Selector.LASSO, "LX", (5, 30), 100, 200),
        ("logistic", Selector.MCP, "LX", (30,), 100, 200),
    ]:
        for kappa in kappas:
            t0 = time.time()
            recalls, sizes, powers, fprs = [], [], {}, {}
            nseeds = 15
            for s in range(nseeds):
                rec, ncand, nv, cv, res = run_rep(task, sel, perturb, kappa, 1000+s, n=n, p=p)
                recalls.append(rec); sizes.append(ncand)
                for k, (pw, fp) in res.items():
                    powers.setdefault(k, []).append(pw)
                    fprs.setdefault(k, []).append(fp)
                if s == 0:
                    print(f"  sample null tau: {np.sort(nv)[-8:]} ... cand tau: {np.sort(cv)}")
            dt = (time.time()-t0)/nseeds
            print(f"{task} {sel.value} pert{perturb} k={kappa}: recall={np.mean(recalls):.2f} "
                  f"|cand|={np.mean(sizes):.1f} {dt:.2f}s/rep")
            for k in powers:
                print(f"    {k}: power={np.mean(powers[k]):.2f} fpr={np.mean(fprs[k]):.3f}")
