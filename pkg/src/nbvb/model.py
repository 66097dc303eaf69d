"""Model objects: hyperparameters, kappa atom grids, design blocks, simulators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .basis import SplineBasis, build_basis, evaluate

__all__ = [
    "AtomGrid",
    "DesignBlocks",
    "Hyperparams",
    "SCENARIOS",
    "SimulatedData",
    "assemble_design",
    "design_rows",
    "make_atom_grid",
    "simulate_dataset",
]


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Hyperparams:
    """Prior scales: ``beta ~ N(0, sigma_beta^2 I)``, ``sigma_j ~ Half-Cauchy(s_sigma)``."""

    sigma_beta: float = float(np.sqrt(1e5))
    s_sigma: float = 1e5

    def __post_init__(self):
        if not (self.sigma_beta > 0 and self.s_sigma > 0):
            raise ValueError("hyperparameters must be strictly positive")


@dataclass(frozen=True, eq=False)
class AtomGrid:
    """Finite support for kappa with unnormalized log prior weights."""

    atoms: np.ndarray
    log_prior: np.ndarray

    def __post_init__(self):
        atoms = _readonly(self.atoms).ravel()
        log_prior = _readonly(self.log_prior).ravel()
        if atoms.size < 1:
            raise ValueError("atom grid must contain at least one atom")
        if atoms.shape != log_prior.shape:
            raise ValueError("atoms and log_prior must have the same length")
        if np.any(~(atoms > 0)) or np.any(np.diff(atoms) <= 0):
            raise ValueError("atoms must be positive and strictly ascending")
        if not np.all(np.isfinite(log_prior)):
            raise ValueError("log prior weights must be finite")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "log_prior", log_prior)

    def __len__(self):
        return self.atoms.size

    def subset(self, idx) -> "AtomGrid":
        idx = np.sort(np.asarray(idx, dtype=int))
        return AtomGrid(self.atoms[idx], self.log_prior[idx])

    def shifted(self, delta: float) -> "AtomGrid":
        return AtomGrid(self.atoms, self.log_prior + delta)


def make_atom_grid(lo: float, hi: float, size: int, rate: float = 100.0) -> AtomGrid:
    """Geometric atom sequence from ``lo`` to ``hi`` with log prior ``-kappa / rate``."""
    size = int(size)
    if size < 1:
        raise ValueError("grid size must be positive")
    if not (lo > 0 and hi > 0 and rate > 0):
        raise ValueError("grid endpoints and prior rate must be positive")
    if size == 1:
        if lo != hi:
            raise ValueError("a single-atom grid needs lo == hi")
        atoms = np.array([float(lo)])
    else:
        if lo >= hi:
            raise ValueError("grid needs lo < hi")
        atoms = lo * np.exp(np.log(hi / lo) * np.arange(size) / (size - 1))
        atoms[-1] = hi
    return AtomGrid(atoms, -atoms / rate)


@dataclass(frozen=True, eq=False)
class DesignBlocks:
    """Response and combined design ``C = [X Z]`` with ``Z`` split into blocks."""

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    block_sizes: tuple = ()
    C: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y)
        yf = np.asarray(y, dtype=float).ravel()
        if np.any(~np.isfinite(yf)) or np.any(yf < 0) or np.any(yf != np.floor(yf)):
            raise ValueError("responses must be nonnegative integers")
        X = _readonly(self.X)
        n = yf.size
        if X.ndim != 2 or X.shape[0] != n:
            raise ValueError(f"X must be {n} x p")
        Z = np.asarray(self.Z, dtype=float)
        if Z.size == 0:
            Z = np.zeros((n, 0))
        Z = _readonly(Z)
        if Z.ndim != 2 or Z.shape[0] != n:
            raise ValueError(f"Z must have {n} rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
            raise ValueError("design matrices must be finite")
        sizes = tuple(int(k) for k in self.block_sizes)
        if any(k <= 0 for k in sizes) or sum(sizes) != Z.shape[1]:
            raise ValueError("block sizes must be positive and sum to the columns of Z")
        object.__setattr__(self, "y", _readonly(yf))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "block_sizes", sizes)
        object.__setattr__(self, "C", _readonly(np.hstack([X, Z])))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def r(self) -> int:
        return len(self.block_sizes)

    @property
    def dim(self) -> int:
        return self.C.shape[1]

    def take(self, idx) -> "DesignBlocks":
        idx = np.asarray(idx)
        return DesignBlocks(self.y[idx], self.X[idx], self.Z[idx], self.block_sizes)


def _as_columns(cols, n=None):
    if cols is None:
        return np.zeros((0 if n is None else n, 0))
    a = np.asarray(cols, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    elif a.ndim == 2 and not isinstance(cols, np.ndarray):
        # a list of column vectors
        a = a.T
    return a


def design_rows(linear_columns, spline_covariates: Sequence, bases: Sequence[SplineBasis]):
    """Rows of ``C`` for new points: ``[1 | linear columns | basis blocks]``."""
    spline_covariates = [np.asarray(v, dtype=float).ravel() for v in spline_covariates]
    if len(spline_covariates) != len(bases):
        raise ValueError("one covariate vector per basis is required")
    n = None
    if linear_columns is not None:
        lin = _as_columns(linear_columns)
        n = lin.shape[0]
    elif spline_covariates:
        n = spline_covariates[0].size
    else:
        raise ValueError("cannot infer the number of rows")
    lin = _as_columns(linear_columns, n)
    if lin.shape[0] != n or any(v.size != n for v in spline_covariates):
        raise ValueError("all covariate columns must have the same length")
    blocks = [np.ones((n, 1)), lin] + [evaluate(b, v) for b, v in zip(bases, spline_covariates)]
    return np.hstack(blocks)


def assemble_design(y, X_columns, spline_terms=()):
    """Build ``DesignBlocks`` for an additive model.

    Parameters
    ----------
    y : array of nonnegative integers, length n
    X_columns : (n, q) array, list of length-n vectors, or None
        Linear covariates; an intercept column is always prepended.
    spline_terms : list of (covariate, knots)
        ``knots`` is a number of interior knots, or an existing
        ``SplineBasis`` to reuse.

    Returns
    -------
    (DesignBlocks, list of SplineBasis)
    """
    y = np.asarray(y)
    n = y.size
    lin = _as_columns(X_columns, n)
    if lin.shape[0] != n:
        raise ValueError(f"linear columns have {lin.shape[0]} rows, response has {n}")
    bases, blocks = [], []
    for cov, spec in spline_terms:
        cov = np.asarray(cov, dtype=float).ravel()
        if cov.size != n:
            raise ValueError(f"spline covariate has length {cov.size}, response has {n}")
        b = spec if isinstance(spec, SplineBasis) else build_basis(cov, spec)
        bases.append(b)
        blocks.append(evaluate(b, cov))
    X = np.hstack([np.ones((n, 1)), lin])
    Z = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return DesignBlocks(y, X, Z, tuple(b.num_basis for b in bases)), bases


# -- simulation scenarios -------------------------------------------------------------

def _phi(x, m, s):
    return norm.pdf(x, loc=m, scale=s)


def eta_additive_1(x):
    return np.cos(4 * np.pi * x) + 2 * x


def eta_additive_2(x):
    return 0.4 * _phi(x, 0.38, 0.08) - 1.02 * x + 0.018 * x ** 2 + 0.08 * _phi(x, 0.75, 0.03)


def eta_nonpar(x):
    return 0.3 * _phi(x, 0.2, 0.08) - 0.3 * _phi(x, 0.65, 0.23) + 0.4 * _phi(x, 0.45, 0.08)


@dataclass(frozen=True)
class _Scenario:
    covariates: tuple
    terms: tuple  # one additive eta component per covariate
    link: str  # "exp" or "identity"

    def eta(self, X):
        return sum(f(X[:, k]) for k, f in enumerate(self.terms))


SCENARIOS = {
    "additive_2term": _Scenario(("x1", "x2"), (eta_additive_1, eta_additive_2), "exp"),
    "nonpar_1term": _Scenario(("x",), (eta_nonpar,), "exp"),
    # eta used directly as the mean; only valid where it is positive
    "nonpar_1term_identity": _Scenario(("x",), (eta_nonpar,), "identity"),
}


@dataclass(frozen=True, eq=False)
class SimulatedData:
    scenario: str
    x: np.ndarray
    y: np.ndarray
    kappa_true: float

    @property
    def columns(self) -> tuple:
        return SCENARIOS[self.scenario].covariates + ("y",)

    def true_eta(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return SCENARIOS[self.scenario].eta(x)

    def true_terms(self, x) -> list:
        """Each covariate's additive component evaluated at the same points ``x``."""
        x = np.asarray(x, dtype=float).ravel()
        return [f(x) for f in SCENARIOS[self.scenario].terms]

    def true_mean(self, x) -> np.ndarray:
        eta = self.true_eta(x)
        return np.exp(eta) if SCENARIOS[self.scenario].link == "exp" else eta

    def table(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])


def simulate_dataset(scenario: str, n: int, kappa_true: float, seed=None) -> SimulatedData:
    """Draw a dataset from one of the built-in scenarios.

    Covariates are i.i.d. Uniform(0, 1). Responses are Negative Binomial with
    shape ``kappa_true``, sampled as Poisson counts with Gamma(kappa, kappa/mu)
    distributed rates.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    if not kappa_true > 0:
        raise ValueError("kappa_true must be positive")
    sc = SCENARIOS[scenario]
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, len(sc.covariates)))
    eta = sc.eta(x)
    mu = np.exp(eta) if sc.link == "exp" else eta
    if np.any(mu <= 0):
        raise ValueError(f"scenario {scenario!r} produced a nonpositive mean; "
                         "use the exp-link variant")
    rate = rng.gamma(kappa_true, mu / kappa_true)
    y = rng.poisson(rate)
    return SimulatedData(scenario, x, y.astype(np.int64), float(kappa_true))
