"""Command-line interface: ``nbvb simulate | fit | stream | summarize``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import snapshot
from .basis import ExtrapolationError, build_basis
from .batch import FitOptions, NumericalError, fit_batch
from .model import SCENARIOS, Hyperparams, assemble_design, design_rows, make_atom_grid, simulate_dataset
from .online import OnlineState, snapshot_posterior, update_one, warmup
from .posterior import kappa_pmf, linear_predictor_summary, response_summary, sigma2_density

log = logging.getLogger("nbvb")

SCENARIO_DEFAULTS = {
    "additive_2term": (500, 3.8),
    "nonpar_1term": (1000, 5.0),
    "nonpar_1term_identity": (1000, 5.0),
}
TRUTH_POINTS = 201


class InputError(ValueError):
    """Bad tabular input; message carries the offending line number."""


# -- tabular I/O ----------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _parse_row(fields, header, lineno, response):
    if len(fields) != len(header):
        raise InputError(f"line {lineno}: expected {len(header)} fields, got {len(fields)}")
    try:
        vals = [float(v) for v in fields]
    except ValueError:
        raise InputError(f"line {lineno}: non-numeric field") from None
    if not all(np.isfinite(vals)):
        raise InputError(f"line {lineno}: non-finite value")
    y = vals[header.index(response)]
    if y < 0 or y != np.floor(y):
        raise InputError(f"line {lineno}: response {y!r} is not a nonnegative integer")
    return vals


def read_table(path, response):
    """Read a delimited file with a header; returns ``(header, array)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = _read_header(reader, response)
        rows = [_parse_row(f, header, reader.line_num, response) for f in reader if f]
    if not rows:
        raise InputError("no data rows")
    return header, np.array(rows)


def _read_header(reader, response):
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InputError("line 1: missing header") from None
    if response not in header:
        raise InputError(f"line 1: response column {response!r} not in header {header}")
    return header


# -- model specification --------------------------------------------------------------

def _spline_spec(text):
    """``name[:knots[:lo:hi]]``."""
    parts = text.split(":")
    if len(parts) not in (1, 2, 4):
        raise argparse.ArgumentTypeError(f"bad spline term {text!r}; use name[:knots[:lo:hi]]")
    try:
        knots = int(parts[1]) if len(parts) > 1 else None
        bounds = (float(parts[2]), float(parts[3])) if len(parts) == 4 else None
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad spline term {text!r}") from None
    if knots is not None and knots < 1:
        raise argparse.ArgumentTypeError("number of knots must be positive")
    return parts[0], knots, bounds


def _model_meta(args, header, data):
    linear = list(args.linear or [])
    if args.spline:
        splines = [(n, k if k is not None else args.knots, b) for n, k, b in args.spline]
    else:
        splines = [(n, args.knots, None) for n in header if n != args.response and n not in linear]
    for name in linear + [s[0] for s in splines]:
        if name not in header:
            raise InputError(f"line 1: column {name!r} not in header {header}")
    covs = linear + [s[0] for s in splines]
    medians = {c: float(np.median(data[:, header.index(c)])) for c in covs}
    return {"response": args.response, "linear": linear,
            "splines": [{"name": n, "knots": k, "boundary": b} for n, k, b in splines],
            "medians": medians,
            "hyper": {"sigma_beta": args.sigma_beta, "s_sigma": args.s_sigma}}


def _fixed_names(meta):
    # each spline covariate also enters linearly; its basis spans only the penalized part
    return list(dict.fromkeys(meta["linear"] + [s["name"] for s in meta["splines"]]))


def _design(meta, header, data, bases=None):
    col = {name: data[:, header.index(name)] for name in header}
    names = _fixed_names(meta)
    lin = np.column_stack([col[c] for c in names]) if names else None
    terms = []
    for k, s in enumerate(meta["splines"]):
        if bases is not None:
            terms.append((col[s["name"]], bases[k]))
        else:
            terms.append((col[s["name"]], build_basis(col[s["name"]], s["knots"], s["boundary"])))
    return assemble_design(col[meta["response"]], lin, terms)


def _row_of(meta, header, vals, bases):
    col = dict(zip(header, vals))
    lin = np.array([[col[c] for c in _fixed_names(meta)]])
    return col[meta["response"]], design_rows(lin, [[col[s["name"]]] for s in meta["splines"]],
                                              bases)[0]


def _grid(args):
    return make_atom_grid(args.grid_lo, args.grid_hi, args.grid_size, args.prior_rate)


def _hyper(args):
    return Hyperparams(args.sigma_beta, args.s_sigma)


# -- summary tables -------------------------------------------------------------------

def write_summaries(post, meta, out: Path, level: float, points: int, suffix: str = "") -> None:
    """κ pmf, fitted curves per spline term and σ² densities."""
    pmf = kappa_pmf(post)
    write_table(out / f"kappa_pmf{suffix}.csv", ["kappa", "prob"], pmf.pairs())
    bases = post.basis_meta or []
    medians = meta["medians"]
    for j, (s, b) in enumerate(zip(meta["splines"], bases), start=1):
        x = np.linspace(*b.boundary, points)
        cols = {c: np.full(points, medians[c]) for c in _fixed_names(meta)}
        cols[s["name"]] = x
        lin = np.column_stack([cols[c] for c in _fixed_names(meta)])
        rows = design_rows(lin, [cols[t["name"]] for t in meta["splines"]], bases)
        eta = linear_predictor_summary(post, rows, level)
        resp = response_summary(post, rows, level)
        lognormal = response_summary(post, rows, level, mean="lognormal").mean
        write_table(out / f"curve_{s['name']}{suffix}.csv",
                    ["x", "eta_mean", "eta_lower", "eta_upper", "mean", "lower", "upper",
                     "mean_lognormal"],
                    zip(x, eta.mean, eta.lower, eta.upper, resp.mean, resp.lower, resp.upper,
                        lognormal))
        # grid spans the component modes lambda / (shape + 1) by three decades either way
        shape = 0.5 * (post.block_sizes[j - 1] + 1)
        modes = np.array([f.lam_sigma2[j - 1] for f in post.per_atom]) / (shape + 1)
        grid = np.geomspace(modes.min() * 1e-3, modes.max() * 1e3, points)
        write_table(out / f"sigma2_{s['name']}{suffix}.csv", ["sigma2", "density"],
                    zip(grid, sigma2_density(post, j, grid)))


# -- commands -------------------------------------------------------------------------

def cmd_simulate(args) -> None:
    n_default, k_default = SCENARIO_DEFAULTS[args.scenario]
    n = args.n if args.n is not None else n_default
    kappa = args.kappa if args.kappa is not None else k_default
    sim = simulate_dataset(args.scenario, n, kappa, seed=args.seed)
    out = Path(args.output)
    write_table(out, list(sim.columns), (list(r[:-1]) + [int(r[-1])] for r in sim.table()))
    x = np.linspace(0.0, 1.0, TRUTH_POINTS)
    names = [f"eta_{c}" for c in SCENARIOS[args.scenario].covariates]
    write_table(out.with_suffix(".truth.csv"), ["x"] + names, zip(x, *sim.true_terms(x)))


def cmd_fit(args) -> None:
    header, data = read_table(args.input, args.response)
    meta = _model_meta(args, header, data)
    d, bases = _design(meta, header, data)
    opts = FitOptions(tol=args.tol, max_iter=args.max_iter, n_jobs=args.n_jobs)
    t0 = time.perf_counter()
    post = fit_batch(d, _hyper(args), _grid(args), opts, bases=bases)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot.dump(post, out / "snapshot.json", meta)
    write_summaries(post, meta, out, args.level, args.points)
    report = {
        "n": d.n, "atoms": len(post.per_atom), "wall_clock_seconds": elapsed,
        "per_atom": [{"kappa": f.kappa, "marginal": f.marginal, "elbo": f.elbo,
                      "iterations": f.iterations, "converged": f.converged, "weight": w}
                     for f, w in zip(post.per_atom, post.weights)],
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))
    log.info("fitted %d atoms in %.2f s", len(post.per_atom), elapsed)


def _stream_lines(path):
    fh = sys.stdin if path == "-" else open(path, newline="")
    try:
        yield from csv.reader(fh)
    finally:
        if fh is not sys.stdin:
            fh.close()


def _checkpoint(state: OnlineState, meta, out: Path, args) -> None:
    tag = f"_{state.stats.n:07d}"
    snapshot.dump(state, out / f"snapshot{tag}.json", meta)
    write_summaries(snapshot_posterior(state), meta, out, args.level, args.points, tag)


def cmd_stream(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reader = _stream_lines(args.input)
    header = _read_header(reader, args.response)
    lineno = 1
    if args.resume:
        state, meta = snapshot.load(args.resume)
        if not isinstance(state, OnlineState):
            raise snapshot.SnapshotError("resume needs a stream snapshot")
    else:
        warm = []
        for fields in reader:
            lineno += 1
            if fields:
                warm.append(_parse_row(fields, header, lineno, args.response))
            if len(warm) == args.n_warm:
                break
        if len(warm) < args.n_warm:
            raise InputError(f"stream ended after {len(warm)} of {args.n_warm} warm-up rows")
        warm = np.array(warm)
        meta = _model_meta(args, header, warm)
        d, bases = _design(meta, header, warm)
        opts = FitOptions(tol=args.tol, max_iter=args.max_iter, n_jobs=args.n_jobs)
        state = warmup(d, _hyper(args), _grid(args), opts, floor=args.floor, tau=args.tau,
                       thin=args.thin, bases=bases)
        del warm, d
        if not all(state.warm_converged):
            log.warning("warm-up fit did not converge for every atom")
        _checkpoint(state, meta, out, args)
    bases = state.basis_meta or []
    for fields in reader:
        lineno += 1
        if not fields:
            continue
        try:
            vals = _parse_row(fields, header, lineno, args.response)
            y, row = _row_of(meta, header, vals, bases)
        except (InputError, ExtrapolationError) as exc:
            if args.strict:
                raise InputError(f"line {lineno}: {exc}") from None
            log.warning("skipping line %d: %s", lineno, exc)
            continue
        update_one(state, y, row)
        if (state.stats.n - state.n_warm) % args.every == 0:
            _checkpoint(state, meta, out, args)
    if (state.stats.n - state.n_warm) % args.every:
        _checkpoint(state, meta, out, args)


def cmd_summarize(args) -> None:
    obj, meta = snapshot.load(args.snapshot)
    post = snapshot_posterior(obj) if isinstance(obj, OnlineState) else obj
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_summaries(post, meta, out, args.level, args.points)


# -- argument parsing -----------------------------------------------------------------

def _positive(kind):
    def parse(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{text} must be positive")
        return v
    return parse


def _level(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("level must lie in (0, 1)")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nbvb", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw a dataset from a built-in scenario")
    sim.add_argument("--scenario", choices=sorted(SCENARIOS), default="additive_2term")
    sim.add_argument("--n", type=_positive(int))
    sim.add_argument("--kappa", type=_positive(float))
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--output", "-o", required=True)
    sim.set_defaults(func=cmd_simulate)

    def model_args(p):
        p.add_argument("--response", default="y")
        p.add_argument("--linear", nargs="*", metavar="COL", help="linear-only covariates")
        p.add_argument("--spline", nargs="*", type=_spline_spec, metavar="COL[:K[:LO:HI]]",
                       help="spline terms (default: every other column)")
        p.add_argument("--knots", type=_positive(int), default=15)
        p.add_argument("--sigma-beta", type=_positive(float), default=316.23)
        p.add_argument("--s-sigma", type=_positive(float), default=1e5)
        p.add_argument("--grid-lo", type=_positive(float), default=0.1)
        p.add_argument("--grid-hi", type=_positive(float), default=100.0)
        p.add_argument("--grid-size", type=_positive(int), default=50)
        p.add_argument("--prior-rate", type=_positive(float), default=100.0)
        p.add_argument("--tol", type=_positive(float), default=1e-10)
        p.add_argument("--max-iter", type=_positive(int), default=500)
        p.add_argument("--n-jobs", type=_positive(int), default=1)

    def summary_args(p):
        p.add_argument("--level", type=_level, default=0.95)
        p.add_argument("--points", type=_positive(int), default=201)

    fit = sub.add_parser("fit", help="batch fit")
    fit.add_argument("--input", "-i", required=True)
    fit.add_argument("--out", "-o", required=True)
    model_args(fit)
    summary_args(fit)
    fit.set_defaults(func=cmd_fit)

    st = sub.add_parser("stream", help="real-time fit, one observation per line")
    st.add_argument("--input", "-i", default="-", help="file, or - for stdin")
    st.add_argument("--out", "-o", required=True)
    st.add_argument("--resume", help="continue from a stream snapshot")
    st.add_argument("--n-warm", type=_positive(int), default=100)
    st.add_argument("--tau", type=_positive(float), default=3.5)
    st.add_argument("--floor", type=_positive(int), default=5)
    st.add_argument("--thin", type=_positive(int), default=1)
    st.add_argument("--every", type=_positive(int), default=50)
    st.add_argument("--strict", action="store_true", help="abort on a malformed line")
    model_args(st)
    summary_args(st)
    st.set_defaults(func=cmd_stream)

    sm = sub.add_parser("summarize", help="tables from a saved snapshot")
    sm.add_argument("--snapshot", "-s", required=True)
    sm.add_argument("--out", "-o", required=True)
    summary_args(sm)
    sm.set_defaults(func=cmd_summarize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except (InputError, snapshot.SnapshotError, NumericalError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
