"""Command-line entry point: ``fluxforge <command> ...``.

Exit status 0 on success, 1 when a verdict or precondition fails, 2 on usage
or format errors. Every JSON or CSV artifact embeds the run configuration
under "config".
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_SEED = 42


class UsageError(ValueError):
    pass


def _default_threads() -> int:
    env = os.environ.get("FLUXFORGE_THREADS")
    if env:
        try:
            k = int(env)
        except ValueError:
            raise UsageError(f"FLUXFORGE_THREADS must be an integer, got {env!r}") from None
        if k < 1:
            raise UsageError("FLUXFORGE_THREADS must be >= 1")
        return k
    return os.cpu_count() or 1


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise UsageError(message)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def run_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return _jsonable(cfg)


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=1, sort_keys=True) + "\n")


def _emit(args, human: list[str], payload: dict) -> None:
    if args.json:
        print(json.dumps(_jsonable(payload), sort_keys=True))
    else:
        for line in human:
            print(line)


def _settings(args):
    from .approximant import PipelineSettings
    _check(args.m >= 2, "--m must be >= 2")
    _check(args.smooth_delta > 0, "--smooth-delta must be positive")
    _check(args.candidates >= 1, "--candidates must be >= 1")
    _check(0 < args.tol < 0.5, "--tol must lie in (0, 0.5)")
    return PipelineSettings(n_candidates=args.candidates, seed=args.seed, tol=args.tol, m=args.m,
                            smooth_delta=args.smooth_delta, refine=args.refine,
                            force_round=args.force_round, threads=args.threads)


def _load(args):
    from .io import read_field
    V = read_field(args.inp)
    if getattr(args, "q", None) is not None:
        from dataclasses import replace
        _check(args.q <= 1, "--q must be <= 1")
        V = replace(V, q=float(args.q))
    return V


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    from .field import gen_circle_map_current, gen_divfree, gen_vortex
    from .io import read_charges, write_field
    _check(args.N >= 2, "--N must be >= 2")
    _check(args.q <= 1, "--q must be <= 1")
    if args.kind == "vortex":
        _check(args.n in (2, 3), "--n must be 2 or 3 for vortex fields")
        _check(args.charges is not None, "vortex fields need --charges")
        V = gen_vortex(args.n, read_charges(args.charges), N=args.N, q=args.q)
    elif args.kind == "circle-map":
        _check(args.n == 2, "circle-map fields need --n 2")
        _check(args.charges is not None, "circle-map fields need --charges")
        charges = read_charges(args.charges)
        _check(all(abs(c.deg) == 1 for c in charges), "circle-map charges must have degree +1 or -1")
        V = gen_circle_map_current([(c.pos, c.deg) for c in charges], N=args.N, q=args.q)
    else:
        _check(args.n in (2, 3), "--n must be 2 or 3 for divergence-free fields")
        V = gen_divfree(args.seed, args.n, N=args.N, q=args.q)
    write_field(args.out, V)
    _emit(args, [f"wrote {args.out}: {args.kind}, n={V.dim}, N={V.grid.cells_per_axis}"],
          {"config": run_config(args), "out": args.out, "dim": V.dim, "N": V.grid.cells_per_axis})
    return EXIT_OK


def cmd_audit(args) -> int:
    from .audit import INTEGRAL, integer_flux_scan, lipschitz_slice_check
    _check(0 < args.tol < 0.5, "--tol must lie in (0, 0.5)")
    _check(args.M >= 2, "--M must be >= 2")
    V = _load(args)
    if args.slice is not None:
        _check(len(args.slice) == V.dim, "--slice needs one coordinate per dimension")
        report = lipschitz_slice_check(V, args.slice, args.levels, args.tol, M=args.M)
    else:
        _check(args.centers >= 1 and args.radii >= 1, "--centers and --radii must be >= 1")
        report = integer_flux_scan(V, args.tol, args.centers, args.radii, args.seed, M=args.M)
    payload = {"config": run_config(args), **report.to_json()}
    if args.out:
        _write_json(args.out, payload)
    evaluated = len(report.samples)
    _emit(args, [f"verdict: {report.verdict}",
                 f"pass fraction: {report.pass_fraction:.4f} of {evaluated} samples ({report.skipped} skipped)",
                 f"max deviation: {report.max_deviation:.3e}"], payload)
    return EXIT_OK if report.verdict == INTEGRAL else EXIT_FAIL


def cmd_decompose(args) -> int:
    from .decomposition import bad_cube_stats, classify_cubes, select_shift
    from .field import WeightedMeasure
    _check(0 < args.tol < 0.5, "--tol must lie in (0, 0.5)")
    _check(args.candidates >= 1, "--candidates must be >= 1")
    V = _load(args)
    mu = WeightedMeasure(V.q)
    mesh, table = select_shift(V, args.epsilon, args.p, mu, args.candidates, args.seed)
    records = classify_cubes(V, mesh, args.tol)
    count, weighted = bad_cube_stats(records, mesh, mu)
    flagged = sum(r.cls == "non-integral" for r in records)
    payload = {"config": run_config(args), "mesh": mesh.to_json(),
               "candidates": [{"shift": list(a), "deviation": d} for a, d in table],
               "records": [r.to_json() for r in records],
               "bad_count": count, "bad_weighted_volume": weighted, "non_integral_count": flagged}
    if args.out:
        _write_json(args.out, payload)
    _emit(args, [f"mesh: eps={mesh.epsilon:g}, {mesh.count} cubes, shift={list(mesh.shift)}",
                 f"bad cubes: {count} (weighted volume {weighted:.4g}), non-integral: {flagged}"], payload)
    return EXIT_FAIL if flagged and not args.force_round else EXIT_OK


def cmd_approximate(args) -> int:
    from .approximant import NonIntegralCubeError, assemble, lp_error, rescale
    from .field import WeightedMeasure
    _check(args.p >= 1, "--p must be >= 1")
    V = _load(args)
    mu = WeightedMeasure(V.q)
    try:
        tilde = assemble(V, args.epsilon, args.p, mu, _settings(args))
    except NonIntegralCubeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    bar = rescale(tilde)
    err = lp_error(bar, V, args.p, mu)
    payload = {"config": run_config(args), "lp_error": err, **bar.summary()}
    _write_json(args.out, payload)
    if args.plot:
        from .plotting import plot_approximant
        plot_approximant(bar, args.plot)
    _emit(args, [f"wrote {args.out}",
                 f"alpha={bar.alpha:.6f}, bad cubes={len(bar.bad)}, charges={len(bar.charges)}",
                 f"L^p error: {err:.6g}"],
          {"config": run_config(args), "out": args.out, "lp_error": err, "alpha": bar.alpha,
           "charges": bar.charges.to_json(), "bad_count": len(bar.bad)})
    return EXIT_OK


CSV_COLUMNS = ["epsilon", "lp_error", "bad_count", "alpha", "wallclock_ms"]


def cmd_converge(args) -> int:
    from .approximant import converge_sweep
    from .field import WeightedMeasure
    _check(args.p >= 1, "--p must be >= 1")
    V = _load(args)
    rows = converge_sweep(V, args.p, WeightedMeasure(V.q), args.eps, _settings(args))
    config = run_config(args)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS + ["error"], extrasaction="ignore")
            writer.writeheader()
            for r in rows:
                writer.writerow({k: r[k] for k in CSV_COLUMNS + ["error"]})
    if args.plot:
        from .plotting import plot_convergence
        plot_convergence(rows, args.plot)
    human = [f"{'epsilon':>10} {'lp_error':>12} {'bad':>4} {'alpha':>8} {'ms':>9}"]
    for r in rows:
        human.append(f"{r['epsilon']:>10.5g} {r['lp_error']:>12.6g} {r['bad_count']:>4d} "
                     f"{r['alpha']:>8.4f} {r['wallclock_ms']:>9.1f}" + (f"  {r['error']}" if r["error"] else ""))
    _emit(args, human, {"config": config, "rows": rows})
    return EXIT_FAIL if any(r["error"] for r in rows) else EXIT_OK


def cmd_connect(args) -> int:
    from .connections import dual_value, greedy_connection, minimal_connection
    from .io import read_charges
    charges = read_charges(args.charges)
    if args.greedy:
        bp = args.boundary_point
        current = greedy_connection(charges, bp)
        mass = current.mass
    else:
        current, mass = minimal_connection(charges)
    payload = {"config": run_config(args), **current.to_json(), "mass": mass}
    if args.dual_res:
        _check(args.dual_res >= 8, "--dual-res must be >= 8")
        payload["dual"] = dual_value(charges, args.dual_res).to_json()
    if args.out:
        _write_json(args.out, payload)
    human = [f"segments: {len(current.segments)}", f"mass: {mass:.12g}"]
    if "dual" in payload:
        human.append(f"dual value: {payload['dual']['value']:.12g}")
    _emit(args, human, payload)
    return EXIT_OK


def _read_samples(path) -> np.ndarray:
    """One number per line, or the last column of a CSV with an optional header."""
    vals = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                vals.append(float(row[-1]))
            except ValueError:
                if vals or lineno > 1:
                    raise UsageError(f"{path}: line {lineno}: not a number: {row[-1]!r}") from None
    _check(len(vals) > 0, f"{path}: no samples")
    return np.array(vals)


def cmd_oned(args) -> int:
    from .oned import NotIntegerValuedError, StepFunction, integer_step_projection, weak_approx_sequence
    samples = _read_samples(args.inp)
    if args.mode == "project":
        try:
            step = integer_step_projection(samples, args.K, args.tol, args.p)
        except NotIntegerValuedError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAIL
    else:
        _check(args.levels >= 0, "--levels must be >= 0")
        step = weak_approx_sequence(StepFunction.from_samples(samples), args.levels)
    payload = {"config": run_config(args), **step.to_json()}
    _write_json(args.out, payload)
    _emit(args, [f"wrote {args.out}: {len(step.values)} intervals, offset {step.offset:.6g}"], payload)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluxforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fluxforge {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for all randomness (default 42)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: FLUXFORGE_THREADS or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a field file")
    p.add_argument("kind", choices=["vortex", "circle-map", "divfree"])
    p.add_argument("--charges", help="charge JSON (vortex, circle-map)")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--N", type=int, default=128)
    p.add_argument("--q", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    def field_in(p):
        p.add_argument("--in", dest="inp", required=True, help="FFLD field file")
        p.add_argument("--q", type=float, default=None, help="override the file's weight exponent")

    p = sub.add_parser("audit", parents=[common], help="integer-flux audit")
    field_in(p)
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--centers", type=int, default=50)
    p.add_argument("--radii", type=int, default=20)
    p.add_argument("--M", type=int, default=256, help="face quadrature nodes per axis")
    p.add_argument("--slice", type=_float_list, default=None, help="x0 for concentric-cube slicing")
    p.add_argument("--levels", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    def pipeline(p):
        p.add_argument("--p", type=float, default=2.0)
        p.add_argument("--candidates", type=int, default=32)
        p.add_argument("--tol", type=float, default=1e-2)
        p.add_argument("--force-round", action="store_true")

    p = sub.add_parser("decompose", parents=[common], help="shift selection and cube classification")
    field_in(p)
    pipeline(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    def solver(p):
        p.add_argument("--m", type=int, default=32, help="extension cells per cube edge")
        p.add_argument("--refine", type=int, default=8, help="face samples per extension cell")
        p.add_argument("--smooth-delta", type=float, default=1e-3)
        p.add_argument("--plot", help="also render a PNG/PDF figure (needs matplotlib)")

    p = sub.add_parser("approximate", parents=[common], help="build the approximating field")
    field_in(p)
    pipeline(p)
    solver(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_approximate)

    p = sub.add_parser("converge", parents=[common], help="epsilon sweep")
    field_in(p)
    pipeline(p)
    solver(p)
    p.add_argument("--eps", type=_float_list, default=[0.25, 0.125, 0.0625])
    p.add_argument("--csv")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("connect", parents=[common], help="connections for a charge set")
    p.add_argument("--charges", required=True)
    p.add_argument("--out")
    p.add_argument("--dual-res", type=int, default=0, help="also compute a dual certificate on this grid")
    p.add_argument("--greedy", action="store_true", help="input-order construction instead of the minimal one")
    p.add_argument("--boundary-point", type=_float_list, default=None)
    p.set_defaults(func=cmd_connect)

    p = sub.add_parser("oned", parents=[common], help="one-dimensional constructions")
    p.add_argument("mode", choices=["project", "weak"])
    p.add_argument("--in", dest="inp", required=True, help="CSV of cell samples on [0, 1)")
    p.add_argument("--out", required=True)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--levels", type=int, default=4)
    p.set_defaults(func=cmd_oned)
    return parser


def main(argv: list[str] | None = None) -> int:
    from .io import FormatError
    from .plotting import PlottingUnavailable

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is None:
            args.threads = _default_threads()
        _check(args.threads >= 1, "--threads must be >= 1")
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, PlottingUnavailable, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:  # parameter outside its documented range
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
