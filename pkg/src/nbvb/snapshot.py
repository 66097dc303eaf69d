"""Versioned JSON snapshots of batch posteriors and online states.

Matrices are stored as ``{"shape": [...], "data": [...]}`` in row-major
order. Python's float repr round-trips exactly, so a restored online state
continues the stream bit-identically.
"""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from .basis import SplineBasis
from .batch import PerAtomFit
from .model import AtomGrid, Hyperparams
from .online import AtomParams, AtomStats, OnlineState, SuffStats
from .posterior import MixturePosterior

__all__ = ["FORMAT", "VERSION", "SnapshotError", "dump", "dumps", "load", "loads"]

FORMAT = "nbvb-snapshot"
VERSION = "1"


class SnapshotError(ValueError):
    """Unreadable, malformed or incompatible snapshot."""


_ARRAY = {
    "type": "object",
    "required": ["shape", "data"],
    "properties": {
        "shape": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "data": {"type": "array", "items": {"type": "number"}},
    },
    "additionalProperties": False,
}

_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "kind", "hyper", "atoms", "log_prior", "p",
                 "block_sizes", "bases", "meta"],
    "properties": {
        "format": {"const": FORMAT},
        "version": {"type": "string"},
        "kind": {"enum": ["batch", "online"]},
        "hyper": {"type": "object", "required": ["sigma_beta", "s_sigma"]},
        "atoms": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "log_prior": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "p": {"type": "integer", "minimum": 1},
        "block_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "bases": {"type": "array"},
        "meta": {"type": "object"},
        "weights": _ARRAY,
        "per_atom": {"type": "array"},
        "online": {"type": "object"},
    },
    "allOf": [
        {"if": {"properties": {"kind": {"const": "batch"}}},
         "then": {"required": ["weights", "per_atom"]}},
        {"if": {"properties": {"kind": {"const": "online"}}},
         "then": {"required": ["online"]}},
    ],
}


def _arr(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarr(d) -> np.ndarray:
    data = np.array(d["data"], dtype=float)
    if data.size != int(np.prod(d["shape"])):
        raise SnapshotError("array data does not match its shape")
    return data.reshape(d["shape"])


def _check_shape(a: np.ndarray, shape: tuple) -> None:
    if a.shape != shape:
        raise SnapshotError(f"array of shape {a.shape} where {shape} was expected")


def _fit_to_dict(f: PerAtomFit) -> dict:
    return {
        "kappa": f.kappa, "mu": _arr(f.mu_bu), "sigma": _arr(f.sigma_bu),
        "lam_sigma2": _arr(f.lam_sigma2), "lam_a": _arr(f.lam_a),
        "recip_sigma2": _arr(f.recip_sigma2), "recip_a": _arr(f.recip_a),
        "elbo": f.elbo, "marginal": f.marginal, "iterations": f.iterations,
        "converged": f.converged,
    }


def _fit_from_dict(d: dict) -> PerAtomFit:
    return PerAtomFit(
        kappa=float(d["kappa"]), mu_bu=_unarr(d["mu"]), sigma_bu=_unarr(d["sigma"]),
        c_alpha=None, lam_sigma2=_unarr(d["lam_sigma2"]), lam_a=_unarr(d["lam_a"]),
        recip_sigma2=_unarr(d["recip_sigma2"]), recip_a=_unarr(d["recip_a"]),
        elbo=float(d["elbo"]), marginal=float(d["marginal"]),
        iterations=int(d["iterations"]), converged=bool(d["converged"]))


def _online_to_dict(s: OnlineState) -> dict:
    st = s.stats
    per = []
    for i in s.active:
        a, q = st.per_kappa[i], s.params[i]
        per.append({
            "index": i,
            "lgamma_sum": a.lgamma_sum, "c_lam": _arr(a.c_lam), "c_ylam": _arr(a.c_ylam),
            "c_lam_c": _arr(a.c_lam_c), "c_ylam_c": _arr(a.c_ylam_c),
            "logcosh_sum": a.logcosh_sum, "y_logcosh": a.y_logcosh,
            "mu": _arr(q.mu), "sigma": _arr(q.sigma), "lam_sigma2": _arr(q.lam_sigma2),
            "lam_a": _arr(q.lam_a), "recip_sigma2": _arr(q.recip_sigma2),
            "recip_a": _arr(q.recip_a),
        })
    return {
        "n": st.n, "y_sum": st.y_sum, "c_sum": _arr(st.c_sum), "cy": _arr(st.cy),
        "warm_mean_log": s.warm_mean_log, "warm_sd_log": s.warm_sd_log, "n_warm": s.n_warm,
        "active": list(s.active), "floor": s.floor, "tau": s.tau, "thin": s.thin,
        "warm_converged": list(s.warm_converged), "per_atom": per,
    }


def _online_from_dict(d: dict, grid, hyper, p, sizes, bases) -> OnlineState:
    stats = SuffStats(n=int(d["n"]), y_sum=float(d["y_sum"]), c_sum=_unarr(d["c_sum"]),
                      cy=_unarr(d["cy"]))
    params = {}
    for e in d["per_atom"]:
        i = int(e["index"])
        stats.per_kappa[i] = AtomStats(
            float(e["lgamma_sum"]), _unarr(e["c_lam"]), _unarr(e["c_ylam"]),
            _unarr(e["c_lam_c"]), _unarr(e["c_ylam_c"]), float(e["logcosh_sum"]),
            float(e["y_logcosh"]))
        params[i] = AtomParams(_unarr(e["mu"]), _unarr(e["sigma"]), _unarr(e["lam_sigma2"]),
                               _unarr(e["lam_a"]), _unarr(e["recip_sigma2"]),
                               _unarr(e["recip_a"]))
    dim, q = p + sum(sizes), len(sizes)
    _check_shape(stats.c_sum, (dim,))
    _check_shape(stats.cy, (dim,))
    for i in params:
        a, b = stats.per_kappa[i], params[i]
        for v in (a.c_lam, a.c_ylam, b.mu):
            _check_shape(v, (dim,))
        for v in (a.c_lam_c, a.c_ylam_c, b.sigma):
            _check_shape(v, (dim, dim))
        for v in (b.lam_sigma2, b.lam_a, b.recip_sigma2, b.recip_a):
            _check_shape(v, (q,))
    active = tuple(int(i) for i in d["active"])
    if set(active) != set(params) or any(not 0 <= i < len(grid) for i in active):
        raise SnapshotError("retained atoms do not match the stored per-atom state")
    return OnlineState(
        grid=grid, hyper=hyper, p=p, block_sizes=sizes, stats=stats, params=params,
        warm_mean_log=float(d["warm_mean_log"]), warm_sd_log=float(d["warm_sd_log"]),
        n_warm=int(d["n_warm"]), active=active, floor=int(d["floor"]), tau=float(d["tau"]),
        thin=int(d["thin"]), warm_converged=tuple(bool(v) for v in d["warm_converged"]),
        basis_meta=bases)


def to_dict(obj, meta: dict | None = None) -> dict:
    """Plain-data form of a ``MixturePosterior`` or ``OnlineState``."""
    if isinstance(obj, MixturePosterior):
        grid, kind = obj.atoms, "batch"
    elif isinstance(obj, OnlineState):
        grid, kind = obj.grid, "online"
    else:
        raise TypeError(f"cannot snapshot {type(obj).__name__}")
    out = {
        "format": FORMAT, "version": VERSION, "kind": kind,
        "atoms": grid.atoms.tolist(), "log_prior": grid.log_prior.tolist(),
        "p": int(obj.p), "block_sizes": list(obj.block_sizes),
        "bases": [b.to_dict() for b in (obj.basis_meta or [])],
        "meta": dict(meta or {}),
    }
    if kind == "batch":
        # hyperparameters are not part of a MixturePosterior; callers pass them via meta
        hyper = (meta or {}).get("hyper", {})
        out["hyper"] = {"sigma_beta": float(hyper.get("sigma_beta", Hyperparams().sigma_beta)),
                        "s_sigma": float(hyper.get("s_sigma", Hyperparams().s_sigma))}
        out["weights"] = _arr(obj.weights)
        out["per_atom"] = [_fit_to_dict(f) for f in obj.per_atom]
    else:
        out["hyper"] = {"sigma_beta": obj.hyper.sigma_beta, "s_sigma": obj.hyper.s_sigma}
        out["online"] = _online_to_dict(obj)
    return out


def from_dict(d: dict):
    """Inverse of ``to_dict``; returns ``(object, meta)``."""
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise SnapshotError("not a model snapshot")
    if d.get("version") != VERSION:
        raise SnapshotError(f"snapshot version {d.get('version')!r} is not supported "
                            f"(this build reads version {VERSION!r})")
    try:
        jsonschema.validate(d, _SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SnapshotError(f"malformed snapshot: {exc.message}") from None
    try:
        grid = AtomGrid(np.array(d["atoms"], dtype=float), np.array(d["log_prior"], dtype=float))
        hyper = Hyperparams(float(d["hyper"]["sigma_beta"]), float(d["hyper"]["s_sigma"]))
        bases = [SplineBasis.from_dict(b) for b in d["bases"]] or None
        p, sizes = int(d["p"]), tuple(int(k) for k in d["block_sizes"])
        if d["kind"] == "batch":
            obj = MixturePosterior(atoms=grid, weights=_unarr(d["weights"]),
                                   per_atom=[_fit_from_dict(f) for f in d["per_atom"]],
                                   p=p, block_sizes=sizes, basis_meta=bases)
            dim, q = p + sum(sizes), len(sizes)
            _check_shape(obj.weights, (len(grid),))
            if len(obj.per_atom) != len(grid):
                raise SnapshotError("per-atom entries do not match the atom grid")
            for f in obj.per_atom:
                _check_shape(f.mu_bu, (dim,))
                _check_shape(f.sigma_bu, (dim, dim))
                for v in (f.lam_sigma2, f.lam_a, f.recip_sigma2, f.recip_a):
                    _check_shape(v, (q,))
        else:
            obj = _online_from_dict(d["online"], grid, hyper, p, sizes, bases)
    except SnapshotError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"malformed snapshot: {exc}") from None
    return obj, d["meta"]


def dumps(obj, meta: dict | None = None) -> str:
    return json.dumps(to_dict(obj, meta), indent=1)


def loads(text: str):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"snapshot is not valid JSON: {exc}") from None
    return from_dict(d)


def dump(obj, path, meta: dict | None = None) -> None:
    Path(path).write_text(dumps(obj, meta))


def load(path):
    return loads(Path(path).read_text())
