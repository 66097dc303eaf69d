"""Structured mean field variational Bayes for Negative Binomial regression.

For each kappa atom the mean field problem, conditional on kappa, is solved
by coordinate ascent over q(alpha|kappa), q(beta,u|kappa), q(a|kappa) and
q(sigma^2|kappa). The converged lower bounds are turned into approximate
marginal log-likelihoods which, with the prior on kappa, give the mixture
weights q*(kappa).
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln, logsumexp

from .model import AtomGrid, DesignBlocks, Hyperparams
from .posterior import MixturePosterior
from .specfun import lambda_jj, log_cosh_half

__all__ = [
    "FitOptions",
    "NumericalError",
    "PerAtomFit",
    "StartValues",
    "compute_elbo",
    "fit_batch",
    "fit_single_atom",
    "marginal_offset",
]

log = logging.getLogger(__name__)

_LOG2 = np.log(2.0)


class NumericalError(ArithmeticError):
    """A precision matrix failed to factorize."""

    def __init__(self, message, kappa=None, iteration=None, observation=None):
        parts = [message]
        if kappa is not None:
            parts.append(f"kappa={kappa:g}")
        if iteration is not None:
            parts.append(f"iteration={iteration}")
        if observation is not None:
            parts.append(f"observation={observation}")
        super().__init__(", ".join(parts))
        self.kappa = kappa
        self.iteration = iteration
        self.observation = observation


@dataclass(frozen=True)
class StartValues:
    """Positive starting values for one atom's coordinate ascent."""

    c_alpha: np.ndarray
    recip_sigma2: np.ndarray


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-10
    max_iter: int = 500
    init: Optional[object] = None
    warm_start: bool = True
    n_jobs: int = 1
    keep_trace: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(eq=False)
class PerAtomFit:
    """Variational parameters conditional on one kappa atom."""

    kappa: float
    mu_bu: np.ndarray
    sigma_bu: np.ndarray
    c_alpha: Optional[np.ndarray]
    lam_sigma2: np.ndarray
    lam_a: np.ndarray
    recip_sigma2: np.ndarray
    recip_a: np.ndarray
    elbo: float
    marginal: float
    iterations: int = 0
    converged: bool = True
    elbo_trace: Optional[np.ndarray] = field(default=None, repr=False)

    def expected_alpha(self, y) -> np.ndarray:
        """Mean of q(alpha|kappa): ``2 (y + kappa) lambda_jj(c)``."""
        return 2.0 * (np.asarray(y, dtype=float) + self.kappa) * lambda_jj(self.c_alpha)


def block_slices(p: int, block_sizes) -> list:
    out, start = [], p
    for k in block_sizes:
        out.append(slice(start, start + k))
        start += k
    return out


def prior_precision(p: int, block_sizes, recip_sigma2, h: Hyperparams) -> np.ndarray:
    """Diagonal of ``blockdiag(sigma_beta^-2 I_p, E[1/sigma_j^2] I_Kj, ...)``."""
    parts = [np.full(p, h.sigma_beta ** -2)]
    parts += [np.full(k, rs) for k, rs in zip(block_sizes, recip_sigma2)]
    return np.concatenate(parts)


def variance_updates(mu, sigma, p, block_sizes, recip_sigma2, h: Hyperparams):
    """One pass of the q(a_j) and q(sigma_j^2) updates.

    Returns ``(lam_a, recip_a, lam_sigma2, recip_sigma2)``.
    """
    r = len(block_sizes)
    lam_a, recip_a = np.empty(r), np.empty(r)
    lam_s, recip_s = np.empty(r), np.empty(r)
    for j, sl in enumerate(block_slices(p, block_sizes)):
        lam_a[j] = recip_sigma2[j] + h.s_sigma ** -2
        recip_a[j] = 1.0 / lam_a[j]
        lam_s[j] = recip_a[j] + 0.5 * (mu[sl] @ mu[sl] + np.trace(sigma[sl, sl]))
        recip_s[j] = (block_sizes[j] + 1) / (2.0 * lam_s[j])
    return lam_a, recip_a, lam_s, recip_s


def elbo_core(mu, sigma, logdet_sigma, linear_stat, logcosh_total, p, block_sizes,
              lam_sigma2, lam_a, recip_sigma2, recip_a, h: Hyperparams) -> float:
    """Lower bound with the data entering through two summaries.

    ``linear_stat`` is ``C'y - kappa C'1`` and ``logcosh_total`` is
    ``(y + kappa 1)' log cosh(c/2)``.
    """
    mb = mu[:p]
    val = (0.5 * mu @ linear_stat - logcosh_total
           - (mb @ mb + np.trace(sigma[:p, :p])) / (2.0 * h.sigma_beta ** 2)
           + 0.5 * logdet_sigma)
    s2 = h.s_sigma ** -2
    for j, sl in enumerate(block_slices(p, block_sizes)):
        quad = mu[sl] @ mu[sl] + np.trace(sigma[sl, sl])
        val += (recip_sigma2[j] * (lam_sigma2[j] - recip_a[j] - 0.5 * quad)
                + recip_a[j] * (lam_a[j] - s2)
                - 0.5 * (block_sizes[j] + 1) * np.log(lam_sigma2[j])
                - np.log(lam_a[j]))
    return float(val)


def marginal_offset(kappa: float, n: int, lgamma_sum: float, y_sum: float) -> float:
    """Kappa-dependent terms that turn the lower bound into the marginal log-likelihood."""
    return float(lgamma_sum
                 + n * (0.5 * kappa * np.log(kappa) - _LOG2 * kappa - gammaln(kappa))
                 - 0.5 * np.log(kappa) * y_sum)


def _logdet_from_cov(sigma) -> float:
    L = np.linalg.cholesky(sigma)
    return float(2.0 * np.sum(np.log(np.diag(L))))


def compute_elbo(state: PerAtomFit, d: DesignBlocks, h: Hyperparams) -> float:
    """Re-evaluate the lower bound of ``state`` from scratch against ``d``."""
    m = d.dim
    if state.mu_bu.shape != (m,) or state.sigma_bu.shape != (m, m):
        raise ValueError(f"state dimension {state.mu_bu.shape} does not match design ({m})")
    if state.c_alpha is None or state.c_alpha.shape != (d.n,):
        raise ValueError("state c_alpha does not match the number of observations")
    if len(state.lam_sigma2) != d.r:
        raise ValueError("state has the wrong number of variance blocks")
    kappa = state.kappa
    linear_stat = d.C.T @ d.y - kappa * d.C.sum(axis=0)
    logcosh_total = (d.y + kappa) @ log_cosh_half(state.c_alpha)
    return elbo_core(state.mu_bu, state.sigma_bu, _logdet_from_cov(state.sigma_bu),
                     linear_stat, logcosh_total, d.p, d.block_sizes,
                     state.lam_sigma2, state.lam_a, state.recip_sigma2, state.recip_a, h)


def fit_single_atom(d: DesignBlocks, h: Hyperparams, kappa: float,
                    opts: FitOptions = FitOptions()) -> PerAtomFit:
    """Run the coordinate ascent cycle for a fixed ``kappa`` until the bound settles.

    The stopping rule is ``|delta| / (1 + |elbo|) < opts.tol``. Hitting
    ``opts.max_iter`` first returns a fit with ``converged=False``.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    kappa = float(kappa)
    y, C, p, sizes = d.y, d.C, d.p, d.block_sizes
    n, r = d.n, d.r
    logk = np.log(kappa)

    init = opts.init
    c = np.ones(n)
    recip_s = np.ones(r)
    if init is not None:
        if getattr(init, "c_alpha", None) is not None and np.shape(init.c_alpha) == (n,):
            c = np.array(init.c_alpha, dtype=float)
        if getattr(init, "recip_sigma2", None) is not None and np.shape(init.recip_sigma2) == (r,):
            recip_s = np.array(init.recip_sigma2, dtype=float)
    if np.any(c <= 0) or np.any(recip_s <= 0):
        raise ValueError("starting values must be positive")

    Cty = C.T @ y
    Ct1 = C.sum(axis=0)
    linear_stat = Cty - kappa * Ct1
    yk = y + kappa

    trace = []
    elbo_prev = -np.inf
    converged = False
    it = 0
    for it in range(1, int(opts.max_iter) + 1):
        mu_alpha = 2.0 * yk * lambda_jj(c)
        prec = (C * mu_alpha[:, None]).T @ C
        prec[np.diag_indices_from(prec)] += prior_precision(p, sizes, recip_s, h)
        try:
            L = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("precision matrix is not positive definite",
                                 kappa=kappa, iteration=it) from exc
        sigma = cho_solve((L, True), np.eye(prec.shape[0]))
        sigma = (sigma + sigma.T) / 2
        mu = sigma @ (0.5 * linear_stat + logk * (C.T @ mu_alpha))

        W = solve_triangular(L, C.T, lower=True)
        c = np.sqrt(np.einsum("ij,ij->j", W, W) + (C @ mu - logk) ** 2)

        lam_a, recip_a, lam_s, recip_s = variance_updates(mu, sigma, p, sizes, recip_s, h)

        logdet = -2.0 * float(np.sum(np.log(np.diag(L))))
        elbo = elbo_core(mu, sigma, logdet, linear_stat, yk @ log_cosh_half(c),
                         p, sizes, lam_s, lam_a, recip_s, recip_a, h)
        trace.append(elbo)
        if abs(elbo - elbo_prev) / (1.0 + abs(elbo)) < opts.tol:
            converged = True
            break
        elbo_prev = elbo

    if not converged:
        log.warning("kappa=%g did not converge in %d iterations", kappa, it)
    marginal = elbo + marginal_offset(kappa, n, float(np.sum(gammaln(yk))), float(y.sum()))
    return PerAtomFit(
        kappa=kappa, mu_bu=mu, sigma_bu=sigma, c_alpha=c,
        lam_sigma2=lam_s, lam_a=lam_a, recip_sigma2=recip_s, recip_a=recip_a,
        elbo=elbo, marginal=marginal, iterations=it, converged=converged,
        elbo_trace=np.array(trace) if opts.keep_trace else None,
    )


def mixture_weights(log_prior, marginals) -> np.ndarray:
    """Normalized ``p(kappa) exp(l(kappa))`` computed in log space."""
    logw = np.asarray(log_prior, dtype=float) + np.asarray(marginals, dtype=float)
    w = np.exp(logw - logsumexp(logw))
    return w / w.sum()


def fit_batch(d: DesignBlocks, h: Hyperparams, g: AtomGrid,
              opts: FitOptions = FitOptions(), bases=None) -> MixturePosterior:
    """Fit every atom of ``g`` and combine the fits into a mixture posterior.

    With ``opts.warm_start`` atoms are visited in ascending order, each
    seeded from its predecessor's converged state; otherwise each starts
    from the defaults and ``opts.n_jobs > 1`` fits them concurrently.
    """
    t0 = time.perf_counter()
    fits = [None] * len(g)
    if opts.warm_start:
        seed = opts.init
        for i, kappa in enumerate(g.atoms):
            fits[i] = fit_single_atom(d, h, kappa, replace(opts, init=seed))
            seed = fits[i]
    else:
        def one(kappa):
            return fit_single_atom(d, h, kappa, opts)
        if opts.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=opts.n_jobs) as ex:
                fits = list(ex.map(one, g.atoms))
        else:
            fits = [one(k) for k in g.atoms]
    weights = mixture_weights(g.log_prior, [f.marginal for f in fits])
    log.info("batch fit over %d atoms took %.3fs", len(g), time.perf_counter() - t0)
    return MixturePosterior(atoms=g, weights=weights, per_atom=fits, p=d.p,
                            block_sizes=d.block_sizes, basis_meta=bases)
