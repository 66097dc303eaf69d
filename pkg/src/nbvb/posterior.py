"""Mixture posterior over kappa atoms and the summaries built from it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gammaln, logsumexp, ndtr, ndtri

__all__ = [
    "KappaPmf",
    "IntervalSummary",
    "MixturePosterior",
    "accuracy_score",
    "kappa_pmf",
    "linear_predictor_summary",
    "response_summary",
    "sigma2_density",
]

_QUANTILE_TOL = 1e-8


@dataclass(eq=False)
class MixturePosterior:
    """Weights q*(kappa) over atoms together with each atom's fit.

    ``per_atom[i]`` must belong to ``atoms.atoms[i]``; a consistently
    permuted ``per_atom``/``weights`` pair is put back into atom order.
    """

    atoms: object  # AtomGrid
    weights: np.ndarray
    per_atom: list
    p: int
    block_sizes: tuple = ()
    basis_meta: Optional[list] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        grid = np.asarray(self.atoms.atoms)
        if len(self.per_atom) != grid.size or w.size != grid.size:
            raise ValueError("one weight and one fit per atom is required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to one")
        kappas = np.array([f.kappa for f in self.per_atom])
        order = np.argsort(kappas, kind="stable")
        if not np.array_equal(kappas[order], grid):
            raise ValueError("per-atom fits do not match the atom grid")
        self.per_atom = [self.per_atom[i] for i in order]
        self.weights = w[order]
        self.block_sizes = tuple(int(k) for k in self.block_sizes)

    @property
    def kappas(self) -> np.ndarray:
        return np.asarray(self.atoms.atoms)

    @property
    def dim(self) -> int:
        return self.per_atom[0].mu_bu.size

    @property
    def r(self) -> int:
        return len(self.block_sizes)

    def weight_of(self, kappa: float) -> float:
        """Weight of ``kappa``; zero for atoms outside this posterior."""
        hit = np.flatnonzero(self.kappas == kappa)
        return float(self.weights[hit[0]]) if hit.size else 0.0

    def coef_mean(self) -> np.ndarray:
        return sum(w * f.mu_bu for w, f in zip(self.weights, self.per_atom))

    def component_moments(self, rows):
        """Per-row, per-atom means ``c'mu`` and variances ``c'Sigma c``."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != self.dim:
            raise ValueError(f"rows have {rows.shape[1]} columns, model has {self.dim}")
        means = np.column_stack([rows @ f.mu_bu for f in self.per_atom])
        var = np.column_stack([np.einsum("ij,jk,ik->i", rows, f.sigma_bu, rows)
                               for f in self.per_atom])
        return means, np.maximum(var, 0.0)


@dataclass(frozen=True)
class KappaPmf:
    atoms: np.ndarray
    probs: np.ndarray
    mean: float
    mean_log: float
    sd_log: float

    @property
    def mode(self) -> float:
        return float(self.atoms[np.argmax(self.probs)])

    def pairs(self):
        return list(zip(self.atoms.tolist(), self.probs.tolist()))


def kappa_pmf(m: MixturePosterior) -> KappaPmf:
    """Atoms with their q*(kappa) probabilities, plus moments of kappa and log kappa."""
    k, w = m.kappas, m.weights
    lk = np.log(k)
    mean_log = float(w @ lk)
    var_log = float(w @ (lk - mean_log) ** 2)
    return KappaPmf(k.copy(), w.copy(), float(w @ k), mean_log, float(np.sqrt(max(var_log, 0.0))))


@dataclass(frozen=True)
class IntervalSummary:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def _mixture_quantile(weights, means, sds, q):
    """Quantile ``q`` of each row's Gaussian mixture, by bisection on the CDF.

    The root is bracketed by the smallest and largest component quantiles,
    which is tight for a single component.
    """
    keep = weights > 0
    w, mu, sd = weights[keep], means[:, keep], sds[:, keep]
    comp = mu + sd * ndtri(q)
    lo, hi = comp.min(axis=1), comp.max(axis=1)
    for _ in range(200):
        if np.all(hi - lo <= _QUANTILE_TOL):
            break
        mid = 0.5 * (lo + hi)
        below = ndtr((mid[:, None] - mu) / sd) @ w < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def linear_predictor_summary(m: MixturePosterior, rows, level: float = 0.95) -> IntervalSummary:
    """Mixture mean and equal-tailed credible interval of ``c'(beta, u)`` per row."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    means, var = m.component_moments(rows)
    sds = np.sqrt(var)
    alpha = (1.0 - level) / 2.0
    return IntervalSummary(
        mean=means @ m.weights,
        lower=_mixture_quantile(m.weights, means, sds, alpha),
        upper=_mixture_quantile(m.weights, means, sds, 1.0 - alpha),
        level=level,
    )


def response_summary(m: MixturePosterior, rows, level: float = 0.95,
                     mean: str = "transform") -> IntervalSummary:
    """Summary of ``exp(c'(beta, u))``.

    Interval endpoints are the exponentiated linear-predictor endpoints.
    ``mean="transform"`` likewise exponentiates the linear-predictor mean;
    ``mean="lognormal"`` gives the exact mixture mean
    ``sum_k w_k exp(m_k + v_k / 2)`` instead.
    """
    lp = linear_predictor_summary(m, rows, level)
    if mean == "lognormal":
        means, var = m.component_moments(rows)
        logs = np.log(np.where(m.weights > 0, m.weights, 1.0))
        terms = np.where(m.weights > 0, means + 0.5 * var + logs, -np.inf)
        center = np.exp(logsumexp(terms, axis=1))
    elif mean == "transform":
        center = np.exp(lp.mean)
    else:
        raise ValueError("mean must be 'lognormal' or 'transform'")
    return IntervalSummary(center, np.exp(lp.lower), np.exp(lp.upper), level)


def sigma2_density(m: MixturePosterior, j: int, grid) -> np.ndarray:
    """Mixture of Inverse-Gamma((K_j + 1)/2, lambda_j) densities for block ``j`` (1-based)."""
    if not 1 <= j <= m.r:
        raise ValueError(f"block index {j} outside 1..{m.r}")
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0):
        raise ValueError("sigma^2 grid must be positive")
    shape = 0.5 * (m.block_sizes[j - 1] + 1)
    lam = np.array([f.lam_sigma2[j - 1] for f in m.per_atom])
    keep = m.weights > 0
    x = grid.ravel()[:, None]
    logdens = (shape * np.log(lam[keep]) - gammaln(shape)
               - (shape + 1.0) * np.log(x) - lam[keep] / x)
    out = np.exp(logsumexp(logdens + np.log(m.weights[keep]), axis=1))
    return out.reshape(grid.shape)


def accuracy_score(f, g, grid=None, *, grid_g=None, norm_tol: float = 1e-3) -> float:
    """``100 (1 - 0.5 * integral |f - g|)`` for two tabulated densities.

    With ``grid`` the integral is the trapezoid rule on that grid; without
    it ``f`` and ``g`` are pmfs on a shared support and the integral is a
    plain sum. ``grid_g``, when given, must equal ``grid``.
    """
    f = np.asarray(f, dtype=float).ravel()
    g = np.asarray(g, dtype=float).ravel()
    if f.shape != g.shape:
        raise ValueError("densities must be tabulated on the same grid")
    if grid_g is not None and (grid is None or not np.array_equal(np.asarray(grid), np.asarray(grid_g))):
        raise ValueError("densities must be tabulated on the same grid")
    if np.any(f < 0) or np.any(g < 0):
        raise ValueError("densities must be nonnegative")
    if grid is None:
        integrate = np.sum
    else:
        grid = np.asarray(grid, dtype=float).ravel()
        if grid.shape != f.shape or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing and match the densities")
        def integrate(v):
            return trapezoid(v, grid)
    for name, v in (("f", f), ("g", g)):
        total = integrate(v)
        if abs(total - 1.0) > norm_tol:
            raise ValueError(f"{name} integrates to {total:.6g}, not 1")
    score = 100.0 * (1.0 - 0.5 * integrate(np.abs(f - g)))
    return float(min(100.0, max(0.0, score)))
