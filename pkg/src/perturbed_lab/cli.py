"""Command-line entry point: ``perturbed-lab <command> [flags]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import density as dens
from . import malliavin as mal
from . import verify as ver
from .coefficients import parse_coeffs
from .errors import ConvergenceError, NumericalError
from .export import write_csv, write_json
from .noise import CameronMartinShift, TimeGrid, map_chunks, sample, sample_batch
from .perturbed import PerturbedSpec, solve_closed_form
from .reflected import ReflectedSpec, solve_stepwise

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_FAIL = 0, 1, 2, 3

COLUMNS_HELP = """\
output columns (fixed order):
  simulate            path_NNNN.csv  t,y,C,F,m,theta   (perturbed)
                                     t,x,g,m,l,v       (--reflected)
  density             density.csv    grid_point,density
                      atoms.csv      delta,max_mass
  malliavin           field.csv      i,j,U             (only for --steps <= 1024)
                      terminal.csv   i,r,U
  verify / compare    <test>.json

exit codes: 0 ok, 1 usage error, 2 numerical failure, 3 verification FAIL
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common")
    g.add_argument("--config", type=Path, help="JSON file of flag defaults (flags win)")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--paths", type=int, default=None)
    g.add_argument("--steps", type=int, default=1024)
    g.add_argument("--horizon", type=float, default=1.0)
    g.add_argument("--alpha", type=float, default=0.0)
    g.add_argument("--y0", type=float, default=0.0, help="start of the perturbed equation")
    g.add_argument("--coeffs", default="constant:1", help="builtin:params, e.g. sin_perturbed:1,0.1")
    g.add_argument("--drift", default=None, help="b0[,b1] for the drift b0 + b1*x")
    g.add_argument("--reflected", action="store_true", help="use the reflected equation")
    g.add_argument("--out", type=Path, default=Path("out"))
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--no-timestamp", action="store_true", help="omit the generation-time line")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(
        prog="perturbed-lab",
        description="Simulate and verify diffusions perturbed by their running maximum.",
        epilog=COLUMNS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    kw = dict(parents=[common], epilog=COLUMNS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)

    sub.add_parser("simulate", help="write solved paths", **kw)

    p = sub.add_parser("density", help="Monte Carlo terminal law: KDE and atom scan", **kw)
    p.add_argument("--bandwidth", default="auto")
    p.add_argument("--grid-points", type=int, default=512)
    p.add_argument("--deltas", default="0.04,0.02,0.01")

    p = sub.add_parser("malliavin", help="derivative field, H-norm and finite-difference check", **kw)
    p.add_argument("--eps", type=float, default=1e-4)

    p = sub.add_parser("verify", help="Picard / nondegeneracy / zero-hit / comparison reports", **kw)
    p.add_argument("test", nargs="?", default="all",
                   choices=("all", "picard", "nondegeneracy", "zero-hit", "compare"))
    p.add_argument("--iterations", type=int, default=8)
    p.add_argument("--delta", type=float, default=0.04)

    sub.add_parser("compare", help="comparison of reflected and perturbed reflected paths", **kw)
    parser.commands = sub.choices
    return parser


def parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        cfg = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--config {args.config}: {exc}") from None
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - set(vars(args)) | {"command", "config"} & set(cfg))
    if unknown:
        raise UsageError(f"--config {args.config}: unknown keys {unknown}")
    if "out" in cfg:
        cfg["out"] = Path(cfg["out"])
    # re-parse so that explicit flags override the file
    parser.commands[args.command].set_defaults(**cfg)
    return parser.parse_args(argv)


def _spec(args, reflected: bool | None = None):
    try:
        coeffs = parse_coeffs(args.coeffs, args.drift)
    except ValueError as exc:
        raise UsageError(f"--coeffs/--drift: {exc}") from None
    try:
        if reflected is None:
            reflected = args.reflected or args.command == "compare"
        if reflected:
            return ReflectedSpec(args.alpha, coeffs)
        return PerturbedSpec(args.y0, args.alpha, coeffs)
    except ValueError as exc:
        raise UsageError(f"--alpha {args.alpha}: {exc}") from None


def _grid(args) -> TimeGrid:
    try:
        return TimeGrid(args.horizon, args.steps)
    except ValueError as exc:
        raise UsageError(f"--steps/--horizon: {exc}") from None


def _solver(spec):
    return solve_stepwise if isinstance(spec, ReflectedSpec) else solve_closed_form


def _emit(args, name: str, payload: dict) -> Path:
    return write_json(args.out / f"{name}.json", payload, timestamp=not args.no_timestamp)


def _inputs(args) -> dict:
    keys = ("command", "seed", "paths", "steps", "horizon", "alpha", "y0", "coeffs", "drift", "reflected")
    return {k: getattr(args, k) for k in keys}


def cmd_simulate(args) -> int:
    spec, grid = _spec(args), _grid(args)
    n_paths = args.paths or 1
    paths = _solver(spec)(spec, sample_batch(grid, args.seed, n_paths))
    written = []
    if args.format == "csv":
        for i in range(n_paths):
            written.append(paths[i].to_csv(args.out / f"path_{i:04d}.csv", not args.no_timestamp))
    else:
        cols = [paths[i].columns() for i in range(n_paths)]
        written.append(_emit(args, "simulate", {"inputs": _inputs(args), "paths": cols}))
    for p in written:
        print(p)
    return EXIT_OK


def _terminal_samples(spec, grid, n_paths, seed):
    solve = _solver(spec)

    def run(start, count):
        p = solve(spec, sample_batch(grid, seed, count, start))
        return mal.terminal_value(p)

    return np.concatenate(map_chunks(run, n_paths, 2000))


def cmd_density(args) -> int:
    spec, grid = _spec(args), _grid(args)
    n_paths = args.paths or 10_000
    xs = _terminal_samples(spec, grid, n_paths, args.seed)
    try:
        deltas = np.array([float(d) for d in args.deltas.split(",")])
        bw = args.bandwidth if args.bandwidth == "auto" else float(args.bandwidth)
    except ValueError as exc:
        raise UsageError(f"--deltas/--bandwidth: {exc}") from None
    masses = dens.atom_scan(xs, deltas)
    stamp = not args.no_timestamp
    summary = {
        "inputs": _inputs(args),
        "deltas": deltas,
        "max_bin_mass": masses,
        "boundary_mass": dens.boundary_mass(xs, deltas),
    }
    try:
        est = dens.kde(xs, bw, args.grid_points)
    except ValueError as exc:
        # a point mass has no density; the atom scan above already shows it
        est = None
        summary["degenerate"] = str(exc)
    else:
        summary.update(bandwidth=est.bandwidth, integral=est.integral)
    if args.format == "csv":
        if est is not None:
            print(est.to_csv(args.out / "density.csv", stamp))
        print(write_csv(args.out / "atoms.csv", {"delta": deltas, "max_mass": masses}, stamp))
    elif est is not None:
        summary.update(grid_points=est.grid_points, density=est.values)
    print(_emit(args, "density", summary))
    return EXIT_OK


def cmd_malliavin(args) -> int:
    spec, grid = _spec(args), _grid(args)
    stamp = not args.no_timestamp
    if args.paths and args.paths > 1:
        rep = mal.nondegeneracy_report(spec, args.paths, args.seed, grid)
        print(_emit(args, "nondegeneracy", {"inputs": _inputs(args), **rep.to_dict()}))
        return EXIT_OK
    w = sample(grid, args.seed)
    solve = _solver(spec)
    path = solve(spec, w)
    col = mal.terminal_derivative(path, spec, w)
    h = CameronMartinShift(grid, np.ones(grid.n_steps))
    analytic = float(np.sum(col[1:]) * grid.dt)
    fd = mal.directional_fd(solve, spec, w, h, args.eps)
    if args.format == "csv":
        if grid.n_steps <= 1024:
            field = (mal.propagate_reflected if isinstance(spec, ReflectedSpec) else mal.propagate_perturbed)(path, spec, w)
            print(field.to_csv(args.out / "field.csv", stamp))
        print(write_csv(args.out / "terminal.csv", {"i": np.arange(grid.n_steps + 1), "r": grid.times, "U": col}, stamp))
    payload = {
        "inputs": _inputs(args),
        "h_norm_squared": float(mal.h_norm_terminal(col, grid.dt)),
        "direction": "constant 1",
        "pairing": analytic,
        "finite_difference": fd,
        "relative_error": abs(analytic - fd) / (abs(fd) + 1e-8),
    }
    if args.format == "json":
        payload["terminal_row"] = col
    print(_emit(args, "malliavin", payload))
    return EXIT_OK


def _run_compare(args) -> bool:
    spec = _spec(args, reflected=True)
    rep = ver.comparison_test(spec.coeffs, spec.alpha, args.paths or 1000, _grid(args), args.seed)
    print(_emit(args, "compare", {"inputs": _inputs(args), **rep.to_dict()}))
    return rep.passed


def cmd_verify(args) -> int:
    tests = ("picard", "nondegeneracy", "zero-hit", "compare") if args.test == "all" else (args.test,)
    ok = True
    for test in tests:
        if test == "compare":
            ok &= _run_compare(args)
            continue
        spec, grid = _spec(args), _grid(args)
        if test == "picard":
            if args.iterations < 8:
                raise UsageError("--iterations must be >= 8 for the d_8/d_4 criterion")
            w = sample_batch(grid, args.seed, args.paths or 32)
            rep = ver.picard_convergence_report(spec, w, args.iterations)
            median = float(np.median(rep.ratio(8, 4)))
            passed = median < 0.5
            payload = {"median_ratio_8_4": median, **rep.to_dict()}
        elif test == "nondegeneracy":
            rep = mal.nondegeneracy_report(spec, args.paths or 10_000, args.seed, grid)
            passed = rep.fraction_zero == 0
            payload = rep.to_dict()
        else:
            spec = _spec(args, reflected=True)
            rep = ver.zero_hit_probability(spec, args.horizon, args.delta, args.paths or 100_000,
                                           args.seed, args.steps)
            passed = 0.3 <= rep.halving_ratio <= 0.7
            payload = rep.to_dict()
        print(_emit(args, test, {"inputs": _inputs(args), **payload, "passed": passed}))
        ok &= passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_compare(args) -> int:
    return EXIT_OK if _run_compare(args) else EXIT_FAIL


COMMANDS = {
    "simulate": cmd_simulate,
    "density": cmd_density,
    "malliavin": cmd_malliavin,
    "verify": cmd_verify,
    "compare": cmd_compare,
}


def run(argv=None) -> int:
    try:
        args = parse(argv)
        if args.paths is not None and args.paths < 1:
            raise UsageError("--paths must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"perturbed-lab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ConvergenceError) as exc:
        print(f"perturbed-lab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
