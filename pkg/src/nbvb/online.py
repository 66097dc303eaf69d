"""Real-time fitting from fixed-size sufficient statistics.

A batch fit on a warm-up prefix seeds per-atom accumulators. Each new
observation then costs one rank-one update of those accumulators and a
single pass of the q(beta, u), q(a) and q(sigma^2) updates for every atom
still retained. The raw data are never stored.

Atoms are pruned to those whose log lies within
``tau * sd * sqrt(n_warm / n)`` of the warm-up posterior mean of log kappa,
never dropping below ``floor`` atoms.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import gammaln

from .batch import (FitOptions, NumericalError, PerAtomFit, elbo_core, fit_batch,
                    marginal_offset, mixture_weights, prior_precision, variance_updates)
from .model import AtomGrid, DesignBlocks, Hyperparams
from .posterior import MixturePosterior, kappa_pmf
from .specfun import lambda_jj, log_cosh_half

__all__ = [
    "AtomStats",
    "AtomParams",
    "OnlineState",
    "SuffStats",
    "online_marginal",
    "reduce_atoms",
    "snapshot_posterior",
    "update_one",
    "warmup",
]


@dataclass
class AtomStats:
    """Accumulators that depend on kappa through the tilts c(alpha|kappa)."""

    lgamma_sum: float         # 1' log Gamma(y + kappa)
    c_lam: np.ndarray         # C' lambda(c)
    c_ylam: np.ndarray        # C' (y * lambda(c))
    c_lam_c: np.ndarray       # C' diag(lambda(c)) C
    c_ylam_c: np.ndarray      # C' diag(y * lambda(c)) C
    logcosh_sum: float        # 1' log cosh(c/2)
    y_logcosh: float          # y' log cosh(c/2)


@dataclass
class SuffStats:
    n: int
    y_sum: float
    c_sum: np.ndarray
    cy: np.ndarray
    per_kappa: Dict[int, AtomStats] = field(default_factory=dict)


@dataclass
class AtomParams:
    mu: np.ndarray
    sigma: np.ndarray
    lam_sigma2: np.ndarray
    lam_a: np.ndarray
    recip_sigma2: np.ndarray
    recip_a: np.ndarray


@dataclass
class OnlineState:
    """Everything needed to continue the stream; size does not grow with n.

    Per-atom dictionaries are keyed by the atom's index in ``grid``.
    """

    grid: AtomGrid
    hyper: Hyperparams
    p: int
    block_sizes: tuple
    stats: SuffStats
    params: Dict[int, AtomParams]
    warm_mean_log: float
    warm_sd_log: float
    n_warm: int
    active: tuple
    floor: int = 5
    tau: float = 3.5
    thin: int = 1
    warm_converged: tuple = ()
    basis_meta: Optional[list] = None

    @property
    def active_atoms(self) -> np.ndarray:
        return self.grid.atoms[list(self.active)]

    @property
    def dim(self) -> int:
        return self.stats.cy.size

    def nbytes(self) -> int:
        """Bytes held in numeric arrays."""
        total = self.stats.c_sum.nbytes + self.stats.cy.nbytes
        for st in self.stats.per_kappa.values():
            total += st.c_lam.nbytes + st.c_ylam.nbytes + st.c_lam_c.nbytes + st.c_ylam_c.nbytes
        for pa in self.params.values():
            total += sum(a.nbytes for a in (pa.mu, pa.sigma, pa.lam_sigma2, pa.lam_a,
                                             pa.recip_sigma2, pa.recip_a))
        return total


def _atom_stats(d: DesignBlocks, kappa: float, c_alpha) -> AtomStats:
    lam = lambda_jj(c_alpha)
    ylam = d.y * lam
    lc = log_cosh_half(c_alpha)
    C = d.C
    return AtomStats(
        lgamma_sum=float(np.sum(gammaln(d.y + kappa))),
        c_lam=C.T @ lam,
        c_ylam=C.T @ ylam,
        c_lam_c=(C * lam[:, None]).T @ C,
        c_ylam_c=(C * ylam[:, None]).T @ C,
        logcosh_sum=float(np.sum(lc)),
        y_logcosh=float(d.y @ lc),
    )


def warmup(d_warm: DesignBlocks, h: Hyperparams, g: AtomGrid, opts: FitOptions = FitOptions(),
           floor: int = 5, tau: float = 3.5, thin: int = 1, bases=None) -> OnlineState:
    """Batch-fit the warm-up data and load the sufficient statistics."""
    if d_warm.n < 1:
        raise ValueError("warm-up data must be nonempty")
    if floor < 1 or not tau > 0 or thin < 1:
        raise ValueError("floor and thin must be positive integers and tau positive")
    post = fit_batch(d_warm, h, g, opts, bases=bases)
    pmf = kappa_pmf(post)
    stats = SuffStats(n=d_warm.n, y_sum=float(d_warm.y.sum()),
                      c_sum=d_warm.C.sum(axis=0), cy=d_warm.C.T @ d_warm.y)
    params = {}
    for i, f in enumerate(post.per_atom):
        stats.per_kappa[i] = _atom_stats(d_warm, f.kappa, f.c_alpha)
        params[i] = AtomParams(f.mu_bu.copy(), f.sigma_bu.copy(), f.lam_sigma2.copy(),
                               f.lam_a.copy(), f.recip_sigma2.copy(), f.recip_a.copy())
    return OnlineState(
        grid=g, hyper=h, p=d_warm.p, block_sizes=d_warm.block_sizes, stats=stats,
        params=params, warm_mean_log=pmf.mean_log, warm_sd_log=pmf.sd_log,
        n_warm=d_warm.n, active=tuple(range(len(g))), floor=int(floor), tau=float(tau),
        thin=int(thin), warm_converged=tuple(f.converged for f in post.per_atom),
        basis_meta=bases,
    )


def retained_interval(s: OnlineState, n: Optional[int] = None):
    """Bounds on log kappa for the atoms kept at sample size ``n``."""
    n = s.stats.n if n is None else n
    half = s.tau * s.warm_sd_log * np.sqrt(s.n_warm / n)
    return s.warm_mean_log - half, s.warm_mean_log + half


def reduce_atoms(s: OnlineState) -> OnlineState:
    """Drop atoms outside the shrinking log-kappa interval, in place.

    If fewer than ``floor`` atoms would survive, the current set is kept.
    """
    lo, hi = retained_interval(s)
    logk = np.log(s.grid.atoms)
    keep = tuple(i for i in s.active if lo <= logk[i] <= hi)
    if len(keep) < min(s.floor, len(s.grid)) or len(keep) == len(s.active):
        return s
    for i in set(s.active) - set(keep):
        del s.stats.per_kappa[i]
        del s.params[i]
    s.active = keep
    return s


def update_one(s: OnlineState, y_new, c_new) -> OnlineState:
    """Absorb one observation into ``s`` (in place) and return it."""
    c_new = np.asarray(c_new, dtype=float).ravel()
    if c_new.size != s.dim:
        raise ValueError(f"design row has {c_new.size} entries, model has {s.dim}")
    y_new = float(y_new)
    if y_new < 0 or y_new != np.floor(y_new):
        raise ValueError("response must be a nonnegative integer")
    st = s.stats
    st.n += 1
    st.y_sum += y_new
    st.c_sum += c_new
    st.cy += y_new * c_new
    reduce_atoms(s)

    h = s.hyper
    solve = (st.n - s.n_warm) % s.thin == 0
    outer = np.outer(c_new, c_new)
    for i in s.active:
        kappa = float(s.grid.atoms[i])
        logk = np.log(kappa)
        acc, par = st.per_kappa[i], s.params[i]
        acc.lgamma_sum += float(gammaln(y_new + kappa))
        c_alpha = np.sqrt(c_new @ par.sigma @ c_new + (c_new @ par.mu - logk) ** 2)
        lam = lambda_jj(c_alpha)
        lc = log_cosh_half(c_alpha)
        acc.c_lam += lam * c_new
        acc.c_ylam += (y_new * lam) * c_new
        acc.c_lam_c += lam * outer
        acc.c_ylam_c += (y_new * lam) * outer
        acc.logcosh_sum += lc
        acc.y_logcosh += y_new * lc
        if not solve:
            continue
        prec = 2.0 * acc.c_ylam_c + 2.0 * kappa * acc.c_lam_c
        prec[np.diag_indices_from(prec)] += prior_precision(s.p, s.block_sizes, par.recip_sigma2, h)
        try:
            L = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("precision matrix is not positive definite",
                                 kappa=kappa, observation=st.n) from exc
        sigma = cho_solve((L, True), np.eye(prec.shape[0]))
        par.sigma = (sigma + sigma.T) / 2
        par.mu = par.sigma @ (0.5 * (st.cy - kappa * st.c_sum)
                              + 2.0 * logk * (acc.c_ylam + kappa * acc.c_lam))
        par.lam_a, par.recip_a, par.lam_sigma2, par.recip_sigma2 = variance_updates(
            par.mu, par.sigma, s.p, s.block_sizes, par.recip_sigma2, h)
    return s


def online_marginal(s: OnlineState, i: int) -> float:
    """Approximate marginal log-likelihood of atom ``i`` from the accumulators."""
    kappa = float(s.grid.atoms[i])
    st, acc, par = s.stats, s.stats.per_kappa[i], s.params[i]
    logdet = 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(par.sigma)))))
    core = elbo_core(par.mu, par.sigma, logdet, st.cy - kappa * st.c_sum,
                     acc.y_logcosh + kappa * acc.logcosh_sum, s.p, s.block_sizes,
                     par.lam_sigma2, par.lam_a, par.recip_sigma2, par.recip_a, s.hyper)
    return core + marginal_offset(kappa, st.n, acc.lgamma_sum, st.y_sum)


def snapshot_posterior(s: OnlineState) -> MixturePosterior:
    """Mixture posterior over the retained atoms; arrays are copied."""
    idx = list(s.active)
    fits = []
    for i in idx:
        kappa = float(s.grid.atoms[i])
        par, acc = s.params[i], s.stats.per_kappa[i]
        marginal = online_marginal(s, i)
        elbo = marginal - marginal_offset(kappa, s.stats.n, acc.lgamma_sum, s.stats.y_sum)
        fits.append(PerAtomFit(
            kappa=kappa, mu_bu=par.mu.copy(), sigma_bu=par.sigma.copy(), c_alpha=None,
            lam_sigma2=par.lam_sigma2.copy(), lam_a=par.lam_a.copy(),
            recip_sigma2=par.recip_sigma2.copy(), recip_a=par.recip_a.copy(),
            elbo=elbo, marginal=marginal, iterations=0, converged=True))
    grid = s.grid.subset(idx)
    weights = mixture_weights(grid.log_prior, [f.marginal for f in fits])
    return MixturePosterior(atoms=grid, weights=weights, per_atom=fits, p=s.p,
                            block_sizes=s.block_sizes,
                            basis_meta=copy.deepcopy(s.basis_meta))
