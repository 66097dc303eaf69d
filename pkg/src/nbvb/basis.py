"""Canonical O'Sullivan penalized-spline bases.

A cubic B-spline basis on quantile knots is mapped through the spectral
decomposition of its integrated squared second-derivative penalty, keeping
only the penalized (non-null) directions. The resulting columns carry
exchangeable N(0, sigma^2) coefficients and are used alongside an explicit
linear term for the same covariate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

__all__ = ["ExtrapolationError", "SplineBasis", "build_basis", "evaluate"]

DEGREE = 3
_BOUNDARY_PAD = 1e-8
_EIG_FLOOR = 1e-10


class ExtrapolationError(ValueError):
    """Raised when a basis is evaluated outside its boundary knots."""


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Knots and canonical transform of one spline term.

    ``transform`` maps the ``len(interior_knots) + 4`` raw B-spline columns
    to the ``num_basis`` canonical columns.
    """

    interior_knots: np.ndarray
    boundary: tuple
    transform: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.interior_knots, dtype=float)
        lo, hi = (float(v) for v in self.boundary)
        if knots.ndim != 1 or knots.size == 0:
            raise ValueError("need at least one interior knot")
        if not (lo < knots[0] and knots[-1] < hi and np.all(np.diff(knots) > 0)):
            raise ValueError("interior knots must be strictly ascending inside the boundary")
        transform = np.asarray(self.transform, dtype=float)
        if transform.shape != (knots.size + 4, knots.size + 2):
            raise ValueError(f"transform has shape {transform.shape}, "
                             f"expected {(knots.size + 4, knots.size + 2)}")
        knots.setflags(write=False)
        transform.setflags(write=False)
        object.__setattr__(self, "interior_knots", knots)
        object.__setattr__(self, "boundary", (lo, hi))
        object.__setattr__(self, "transform", transform)

    @property
    def num_basis(self) -> int:
        return self.interior_knots.size + 2

    @property
    def full_knots(self) -> np.ndarray:
        lo, hi = self.boundary
        return np.concatenate([np.full(DEGREE + 1, lo), self.interior_knots,
                               np.full(DEGREE + 1, hi)])

    def evaluate(self, x) -> np.ndarray:
        return evaluate(self, x)

    def to_dict(self) -> dict:
        return {
            "interior_knots": self.interior_knots.tolist(),
            "boundary": list(self.boundary),
            "transform": {"shape": list(self.transform.shape),
                          "data": self.transform.ravel().tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplineBasis":
        t = d["transform"]
        return cls(np.array(d["interior_knots"], dtype=float), tuple(d["boundary"]),
                   np.array(t["data"], dtype=float).reshape(t["shape"]))


def _raw_design(knots, x, deriv=0):
    nb = knots.size - DEGREE - 1
    spl = BSpline(knots, np.eye(nb), DEGREE, extrapolate=True)
    if deriv:
        spl = spl.derivative(deriv)
    return spl(x)


def _penalty(knots):
    # B'' is piecewise linear, so Simpson's rule on every knot interval is exact.
    breaks = np.unique(knots)
    h = np.diff(breaks)
    nodes = np.concatenate([breaks[:-1], (breaks[:-1] + breaks[1:]) / 2, breaks[1:]])
    weights = np.concatenate([h / 6, 4 * h / 6, h / 6])
    d2 = _raw_design(knots, nodes, deriv=2)
    return (d2 * weights[:, None]).T @ d2


def build_basis(x, num_interior_knots: int, boundary=None) -> SplineBasis:
    """Construct the canonical O'Sullivan basis for covariate values ``x``.

    Interior knots sit at equally spaced quantiles of the distinct values of
    ``x``. The boundary knots default to the range of ``x`` widened by a
    relative ``1e-8`` on each side; pass ``boundary=(lo, hi)`` to fix them,
    e.g. when later data may fall outside the values seen so far.
    """
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("covariate values must be finite")
    num_interior_knots = int(num_interior_knots)
    if num_interior_knots < 1:
        raise ValueError("num_interior_knots must be positive")
    ux = np.unique(x)
    if ux.size < num_interior_knots + 4:
        raise ValueError(f"need at least {num_interior_knots + 4} distinct covariate "
                         f"values for {num_interior_knots} interior knots, got {ux.size}")

    probs = np.linspace(0.0, 1.0, num_interior_knots + 2)[1:-1]
    interior = np.quantile(ux, probs)
    if boundary is None:
        pad = _BOUNDARY_PAD * (ux[-1] - ux[0])
        lo, hi = ux[0] - pad, ux[-1] + pad
    else:
        lo, hi = (float(v) for v in boundary)
        if not (lo <= ux[0] and ux[-1] <= hi):
            raise ValueError(f"boundary [{lo}, {hi}] does not contain the covariate range")

    knots = np.concatenate([np.full(DEGREE + 1, lo), interior, np.full(DEGREE + 1, hi)])
    omega = _penalty(knots)
    omega = (omega + omega.T) / 2
    evals, evecs = np.linalg.eigh(omega)
    # eigh sorts ascending; the two smallest span the constant/linear null space
    keep = slice(evals.size - 1, evals.size - num_interior_knots - 3, -1)
    d = evals[keep]
    u = evecs[:, keep]
    d = np.maximum(d, _EIG_FLOOR * evals[-1])
    # fix eigenvector signs so the transform does not depend on LAPACK internals
    signs = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])])
    u = u * signs
    return SplineBasis(interior, (lo, hi), u / np.sqrt(d))


def evaluate(b: SplineBasis, x) -> np.ndarray:
    """Canonical basis rows ``z_1(x) .. z_K(x)`` at each value of ``x``."""
    x = np.asarray(x, dtype=float).ravel()
    lo, hi = b.boundary
    if not np.all(np.isfinite(x)):
        raise ValueError("evaluation points must be finite")
    if x.size and (x.min() < lo or x.max() > hi):
        raise ExtrapolationError(
            f"evaluation points span [{x.min()}, {x.max()}], outside basis range [{lo}, {hi}]")
    return _raw_design(b.full_knots, x) @ b.transform
