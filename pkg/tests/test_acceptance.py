"""Acceptance suite: ten end-to-end criteria at their stated tolerances.

Each criterion is a function returning ``(passed, detail)``. Under pytest
every criterion records one line that is echoed in the terminal summary.
Running this file directly prints the same lines.
"""
import gc
import math
import sys
import time
from functools import cache
from pathlib import Path

import numpy as np
import psutil
import pytest
from scipy.stats import norm

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES, additive_design  # noqa: E402
from oracles import intercept_only_cycles  # noqa: E402

from nbvb import (FitOptions, Hyperparams, StartValues, assemble_design, build_basis,  # noqa: E402
                  fit_batch, fit_single_atom, make_atom_grid, simulate_dataset)
from nbvb.model import DesignBlocks, design_rows  # noqa: E402
from nbvb.online import snapshot_posterior, update_one, warmup  # noqa: E402
from nbvb.posterior import accuracy_score, response_summary  # noqa: E402
from nbvb.specfun import PgParams, pg_sample_series  # noqa: E402

H = Hyperparams()
KAPPA_ADD = 3.8
KAPPA_NP = 5.0
SEEDS = range(1, 21)


def additive_grid():
    return make_atom_grid(KAPPA_ADD / 10, KAPPA_ADD * 10, 50)


@cache
def additive_fits():
    """Twenty additive two-term fits with ELBO traces kept; shared by criteria 1 and 5."""
    t0 = time.perf_counter()
    fits = []
    for seed in SEEDS:
        _, d, bases = additive_design(seed, kappa=KAPPA_ADD)
        fits.append(fit_batch(d, H, additive_grid(), FitOptions(keep_trace=True), bases=bases))
    return fits, time.perf_counter() - t0


def stream_design(seed, n, n_warm=100, knots=35):
    sim = simulate_dataset("nonpar_1term", n, KAPPA_NP, seed=seed)
    x = sim.x[:, 0]
    basis = build_basis(x[:n_warm], knots, boundary=(0.0, 1.0))
    return assemble_design(sim.y, x, [(x, basis)])


def stream_grid():
    return make_atom_grid(KAPPA_NP / 10, KAPPA_NP * 10, 50)


# -- criteria -------------------------------------------------------------------------

def criterion_1():
    fits, elapsed = additive_fits()
    worst = 0.0
    for post in fits:
        for f in post.per_atom:
            tr = f.elbo_trace
            drops = -np.diff(tr) / np.abs(tr[1:])
            worst = max(worst, float(drops.max(initial=0.0)))
    ok = worst <= 1e-8 and elapsed < 300
    return ok, f"{len(fits)} datasets x 50 atoms, worst relative drop {worst:.2e}, {elapsed:.1f} s"


def criterion_2():
    rng = np.random.default_rng(2)
    worst = 0.0
    for seed in range(1, 6):
        _, d, _ = additive_design(seed, kappa=KAPPA_ADD)
        atoms = additive_grid().atoms[[0, 12, 24, 36, 49]]
        for kappa in atoms:
            vals = []
            for _ in range(3):
                sv = StartValues(rng.uniform(0.1, 10.0, d.n), rng.uniform(0.01, 100.0, d.r))
                vals.append(fit_single_atom(d, H, kappa, FitOptions(init=sv, tol=1e-12)).marginal)
            worst = max(worst, float(np.ptp(vals)))
    return worst < 1e-6, f"5 datasets x 5 atoms x 3 starts, worst spread {worst:.2e}"


def criterion_3():
    rng = np.random.default_rng(3)
    worst = 0.0
    for n in (1, 3, 10):
        y = rng.poisson(3.0, n)
        d = DesignBlocks(y, np.ones((n, 1)), np.zeros((n, 0)))
        for kappa in (0.5, 3.8, 20.0):
            fit = fit_single_atom(d, H, kappa)
            ref = intercept_only_cycles(y.tolist(), kappa, H.sigma_beta, fit.iterations)
            diffs = [abs(fit.mu_bu[0] - ref["mu"]), abs(fit.sigma_bu[0, 0] - ref["sigma"]),
                     float(np.max(np.abs(fit.c_alpha - ref["c"]))),
                     abs(fit.elbo - ref["elbo"]), abs(fit.marginal - ref["marginal"])]
            worst = max(worst, *diffs)
    return worst <= 1e-10, f"n in (1, 3, 10) x 3 atoms, worst abs difference {worst:.2e}"


def criterion_4():
    _, d, bases = additive_design(100, kappa=KAPPA_ADD)
    fit = fit_single_atom(d, H, KAPPA_ADD)
    expected = fit.expected_alpha(d.y)
    idx = np.linspace(0, d.n - 1, 10).astype(int)
    worst = 0.0
    for i in idx:
        b, c = d.y[i] + fit.kappa, fit.c_alpha[i]
        x = pg_sample_series(PgParams(b, c), truncation=10_000, seed=int(i), size=100_000)
        z = abs(x.mean() - expected[i]) / (x.std(ddof=1) / math.sqrt(x.size))
        worst = max(worst, float(z))
    return worst < 4, f"10 observations, 1e5 draws, truncation 1e4, worst |z| {worst:.2f}"


def criterion_5():
    fits, _ = additive_fits()
    means = np.array([post.weights @ post.kappas for post in fits])
    inside = np.sum((means >= KAPPA_ADD / 2) & (means <= 2 * KAPPA_ADD))
    ok = inside >= 0.8 * len(fits)
    return ok, (f"{inside}/{len(fits)} posterior means in [{KAPPA_ADD / 2}, {2 * KAPPA_ADD}], "
                f"range {means.min():.2f} to {means.max():.2f}")


def criterion_6():
    _, d, bases = additive_design(7, kappa=KAPPA_ADD)
    t0 = time.perf_counter()
    post = fit_batch(d, H, additive_grid(), FitOptions(tol=1e-10), bases=bases)
    elapsed = time.perf_counter() - t0
    ok = elapsed <= 10 and all(f.converged for f in post.per_atom)
    return ok, f"n=500, 50 atoms, {elapsed:.2f} s"


def criterion_7():
    d, bases = stream_design(1, 100)
    g = stream_grid()
    ref = fit_batch(d, H, g, bases=bases)
    snap = snapshot_posterior(warmup(d, H, g, bases=bases))
    dl = max(abs(a.marginal - b.marginal) for a, b in zip(snap.per_atom, ref.per_atom))
    dm = max(float(np.max(np.abs(a.mu_bu - b.mu_bu))) for a, b in zip(snap.per_atom, ref.per_atom))
    dw = float(np.max(np.abs(snap.weights - ref.weights)))
    worst = max(dl, dm, dw)
    return worst <= 1e-8, f"marginal {dl:.1e}, mean {dm:.1e}, weight {dw:.1e}"


def tracking_error(seed, n_full=1000, n_warm=100):
    d, bases = stream_design(seed, n_full, n_warm)
    g = stream_grid()
    s = warmup(d.take(np.arange(n_warm)), H, g, bases=bases)
    for t in range(n_warm, n_full):
        update_one(s, d.y[t], d.C[t])
    online = snapshot_posterior(s)
    batch = fit_batch(d, H, g, bases=bases)
    x = np.linspace(0.0, 1.0, 201)
    rows = design_rows(x, [x], bases)
    a = response_summary(online, rows).mean
    b = response_summary(batch, rows).mean
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def criterion_8():
    errs = {seed: tracking_error(seed) for seed in (1, 2, 3)}
    text = ", ".join(f"seed {k}: {v:.1%}" for k, v in errs.items())
    return max(errs.values()) <= 0.15, f"relative sup-norm {text}"


def criterion_9():
    x = np.linspace(-12.0, 13.0, 200_001)
    f, g = norm.pdf(x), norm.pdf(x, loc=1.0)
    same = accuracy_score(f, f, x)
    shifted = accuracy_score(f, g, x)
    closed = 100 * (1 - (2 * norm.cdf(0.5) - 1))
    pmf = np.array([0.1, 0.25, 0.4, 0.25])
    discrete = accuracy_score(pmf, pmf)
    ok = same == 100.0 and abs(shifted - 61.71) <= 0.05 and discrete == 100.0
    return ok, (f"identical {same}, shifted {shifted:.4f} (closed form {closed:.4f}), "
                f"discrete {discrete}")


def criterion_10():
    n_warm, n_stream = 100, 10_000
    d, bases = stream_design(4, n_warm + n_stream, n_warm)
    y, C = d.y.copy(), d.C.copy()
    s = warmup(d.take(np.arange(n_warm)), H, stream_grid(), bases=bases)
    del d
    proc = psutil.Process()
    gc.collect()
    base = proc.memory_info().rss
    size0 = s.nbytes()
    for t in range(n_warm, n_warm + n_stream):
        update_one(s, y[t], C[t])
    gc.collect()
    growth = (proc.memory_info().rss - base) / base
    ok = growth <= 0.05 and s.nbytes() <= size0
    return ok, (f"{n_stream} updates, RSS growth {growth:.2%}, "
                f"state {size0} -> {s.nbytes()} bytes")


CRITERIA = {
    1: ("ELBO monotonicity", criterion_1),
    2: ("init invariance", criterion_2),
    3: ("tiny-instance oracle", criterion_3),
    4: ("Polya-Gamma moment oracle", criterion_4),
    5: ("kappa recovery", criterion_5),
    6: ("speed", criterion_6),
    7: ("online equals batch at warm-up", criterion_7),
    8: ("online tracking at end of stream", criterion_8),
    9: ("accuracy score", criterion_9),
    10: ("streaming memory bound", criterion_10),
}


def run(k):
    name, fn = CRITERIA[k]
    ok, detail = fn()
    line = f"AC{k:<2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line, flush=True)
    return ok


@pytest.mark.parametrize("k", [pytest.param(k, marks=pytest.mark.slow) if k == 4 else k
                               for k in sorted(CRITERIA)])
def test_acceptance(k):
    assert run(k), ACCEPTANCE_LINES[k]


if __name__ == "__main__":
    results = [run(k) for k in sorted(CRITERIA)]
    sys.exit(0 if all(results) else 1)
