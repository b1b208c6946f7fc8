"""Command-line front end: ``snakelab <subcommand> [options]``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 success with estimator warnings.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .estimators import (
    BesselConfig,
    EstimatorWarning,
    TRUNCATION_WARN,
    analytic_min_ratio,
    bessel_moment_formula,
    config_digest,
    default_threads,
    estimate_min_ratio,
    estimate_range_moment,
    increase_frequencies,
    increase_median_report,
    occupation_scaling_study,
    sample_raw_ranges,
    stream,
)
from .snake import sample_snake, to_csv as snake_to_csv
from .stable_core import DomainError, StableParams
from .trees import OffspringLaw, ScalingRegime, feasible_size, sample_conditioned_tree
from .verify import format_table, run_verify
from .vlambda import GridSpec, moment_constants, solve_bvp_interval, vtable_halfline

EXIT_OK, EXIT_VERIFY_FAILED, EXIT_CONFIG, EXIT_WARNINGS = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# output helpers


class Output:
    """Writes named artifacts either into ``out_dir`` or to stdout."""

    def __init__(self, out_dir: Optional[str], fmt: str, stdout=None):
        self.out_dir = Path(out_dir) if out_dir else None
        self.fmt = fmt
        self.stdout = stdout or sys.stdout
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        if self.out_dir:
            (self.out_dir / name).write_text(text)
        else:
            self.stdout.write(text)


def _meta_lines(args, digest: str) -> list[str]:
    return [f"alpha={args.alpha!r} seed={args.seed} config_digest={digest}"]


def _csv(rows: list[dict], meta: list[str]) -> str:
    cols = list(rows[0]) if rows else []
    lines = [f"# {m}" for m in meta] + [",".join(cols)]
    for row in rows:
        lines.append(",".join(_cell(row[c]) for c in cols))
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True).replace(",", ";")
    return str(v)


def _emit_reports(out: Output, name: str, reports, args, digest: str) -> None:
    if out.fmt == "json":
        out.write(f"{name}.jsonl", "".join(r.to_json() + "\n" for r in reports))
    else:
        rows = [
            {
                "name": r.name,
                "point": r.point,
                "std_error": r.std_error,
                "n_samples": r.n_samples,
                "n_tree_size": r.n_tree_size,
                "seed": r.seed,
                "config_digest": r.config_digest,
                "extras": r.extras,
            }
            for r in reports
        ]
        out.write(f"{name}.csv", _csv(rows, _meta_lines(args, digest)))


def _run_config(args) -> dict:
    skip = {"func", "config", "out", "threads", "format"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _params(args) -> StableParams:
    try:
        return StableParams(args.alpha)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _regime(args, n: int) -> ScalingRegime:
    if not feasible_size(n):
        raise ConfigError(f"tree size {n} is infeasible for this offspring law")
    if args.calibrated:
        return ScalingRegime.calibrated(n, args.alpha)
    return ScalingRegime(n, args.alpha)


# --------------------------------------------------------------------------
# subcommands


def cmd_constants(args, out: Output) -> int:
    params = _params(args)
    row = dict(params.as_dict())
    mc = moment_constants(params)
    row.update(mc.as_dict())
    row["min_ratio"] = mc.min_ratio
    row["blowup_constant"] = params.blowup_constant
    digest = config_digest(_run_config(args))
    if out.fmt == "json":
        out.write("constants.json", json.dumps(row, sort_keys=True) + "\n")
    else:
        out.write("constants.csv", _csv([row], _meta_lines(args, digest)))
    return EXIT_OK


def cmd_vlambda(args, out: Output) -> int:
    params = _params(args)
    if args.lam < 0:
        raise ConfigError("--lam must be nonnegative")
    a = -math.inf if args.a is None else args.a
    b = math.inf if args.b is None else args.b
    if not a < b:
        raise ConfigError("need a < b")
    spec = GridSpec(n_points=args.points)
    if a == 0.0 and math.isinf(b):
        table = vtable_halfline(params, args.lam, spec)
    else:
        table = solve_bvp_interval(params, args.lam, a, b, spec)
    digest = config_digest(_run_config(args))
    if out.fmt == "json":
        out.write("vlambda.json", table.to_json() + "\n")
    else:
        out.write("vlambda.csv", table.to_csv(header_lines=_meta_lines(args, digest)))
    return EXIT_OK


def cmd_simulate(args, out: Output) -> int:
    _params(args)
    regime = _regime(args, args.n)
    law = OffspringLaw(args.alpha)
    digest = config_digest(_run_config(args))
    meta = _meta_lines(args, digest)
    rows = []
    for k in range(args.trees):
        rng = stream(args.seed, k)
        snake = sample_snake(sample_conditioned_tree(law, args.n, rng), regime, rng)
        rows.append({"tree": k, "n": args.n, "R": snake.R, "L": snake.L, "s_star": snake.s_star,
                     "max_height": float(snake.scaled_heights.max())})
        if out.out_dir:
            out.write(f"snake_{k:05d}.csv", snake_to_csv(snake, meta))
    if out.fmt == "json":
        out.write("simulate.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    else:
        out.write("simulate.csv", _csv(rows, meta))
    return EXIT_OK


def cmd_moments(args, out: Output) -> int:
    params = _params(args)
    regime = _regime(args, args.n)
    if args.beta < 0:
        raise ConfigError("--beta must be nonnegative")
    raw = sample_raw_ranges(args.alpha, args.n, args.trees, args.seed, args.threads)
    reports = [
        estimate_range_moment(params, regime, args.beta, args.trees, args.seed, raw_ranges=raw),
        estimate_min_ratio(params, regime, args.trees, args.seed, raw_ranges=raw),
    ]
    digest = config_digest(_run_config(args))
    _emit_reports(out, "moments", reports, args, digest)
    if out.out_dir:
        rows = [{"tree": i, "R": float(r * regime.label_scale), "L": float(l * regime.label_scale)} for i, (r, l) in enumerate(raw)]
        out.write("ranges.csv", _csv(rows, _meta_lines(args, digest)))
    return EXIT_OK


def cmd_occupation(args, out: Output) -> int:
    params = _params(args)
    regime = _regime(args, args.n)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EstimatorWarning)
        try:
            reports = occupation_scaling_study(params, regime, args.lam, args.eps, args.trees, args.seed, args.threads)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    digest = config_digest(_run_config(args))
    _emit_reports(out, "occupation", reports, args, digest)
    flagged = any(r.extras.get("truncation", 0.0) > TRUNCATION_WARN for r in reports) or caught
    return EXIT_WARNINGS if flagged else EXIT_OK


def cmd_bessel(args, out: Output) -> int:
    params = _params(args)
    if args.lam < 0:
        raise ConfigError("--lam must be nonnegative")
    if any(e <= 0 for e in args.eps):
        raise ConfigError("--eps values must be positive")
    table = vtable_halfline(params, args.lam, GridSpec(n_points=256))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EstimatorWarning)
        reports = [
            bessel_moment_formula(params, table, e, BesselConfig.for_params(params, e), args.paths, args.seed + i, args.threads)
            for i, e in enumerate(args.eps)
        ]
    digest = config_digest(_run_config(args))
    _emit_reports(out, "bessel", reports, args, digest)
    return EXIT_WARNINGS if caught else EXIT_OK


def cmd_increase(args, out: Output) -> int:
    params = _params(args)
    if not (args.delta > 0 and args.eta > 0):
        raise ConfigError("--delta and --eta must be positive")
    reports = []
    rows = []
    for n in args.n:
        regime = _regime(args, n)
        reports.append(increase_median_report(params, regime, args.delta, args.eta, args.trees, args.seed, args.threads))
        if out.out_dir:
            freq = increase_frequencies(params, regime, args.delta, args.eta, args.trees, args.seed, args.threads)
            rows += [{"n": n, "tree": i, "frequency": float(f)} for i, f in enumerate(freq)]
    digest = config_digest(_run_config(args))
    _emit_reports(out, "increase", reports, args, digest)
    if rows:
        out.write("increase_frequencies.csv", _csv(rows, _meta_lines(args, digest)))
    return EXIT_OK


def cmd_verify(args, out: Output) -> int:
    only = []
    for item in args.only or []:
        only += [s for s in item.split(",") if s]
    try:
        results = run_verify(only or None, seed=args.seed, threads=args.threads)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out.write("verify.txt", format_table(results) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY_FAILED


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, alpha_default: float = 1.5) -> None:
    p.add_argument("--alpha", type=float, default=alpha_default, help="stability index in [1.05, 1.95]")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default=None, help="output directory (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: $SNAKELAB_THREADS or 1)")
    p.add_argument("--config", default=None, help="JSON file of option defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snakelab", description="Stable snakes: exact constants, ODE tables and Monte Carlo studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="model constants and moment formulas (range moments, min-ratio constant alpha_0)")
    _common(p)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("vlambda", help="table of v solving 1/2 v'' = v^alpha - lam with infinite boundary values")
    _common(p)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--a", type=float, default=0.0, help="left endpoint (omit for -inf by passing --a=-inf)")
    p.add_argument("--b", type=float, default=math.inf)
    p.add_argument("--points", type=int, default=512)
    p.set_defaults(func=cmd_vlambda)

    p = sub.add_parser("simulate", help="size-conditioned stable trees with Gaussian labels (discrete snakes)")
    _common(p)
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--trees", type=int, default=10)
    p.add_argument("--calibrated", action="store_true", help="use the frozen label-scale correction")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("moments", help="Monte Carlo range moments N^(1)[R^beta] and the min(R,-L) ratio")
    _common(p)
    p.add_argument("--beta", type=float, default=4.0)
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--calibrated", action="store_true")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("occupation", help="occupation near the minimum, normalized by eps^(2 alpha/(alpha-1))")
    _common(p)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--eps", type=_float_list, default=[0.2, 0.1, 0.05])
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--calibrated", action="store_true")
    p.set_defaults(func=cmd_occupation)

    p = sub.add_parser("bessel", help="Bessel-process formula for the first moment of the occupation near the minimum")
    _common(p)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--eps", type=_float_list, default=[0.2, 0.1, 0.05, 0.025])
    p.add_argument("--paths", type=int, default=4096)
    p.set_defaults(func=cmd_bessel)

    p = sub.add_parser("increase", help="frequency of discrete (delta, eta)-increase points across tree sizes")
    _common(p)
    p.add_argument("--n", type=_int_list, default=[512, 4096])
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--calibrated", action="store_true")
    p.set_defaults(func=cmd_increase)

    p = sub.add_parser("verify", help="run the acceptance checks A1-A9 and print a PASS/FAIL table")
    _common(p)
    p.add_argument("--only", action="append", help="suite (analytic, stochastic, oracle) or criterion key; repeatable")
    p.set_defaults(func=cmd_verify)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        explicit = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
        for key, value in overrides.items():
            if key not in vars(args):
                raise ConfigError(f"unknown config key {key!r}")
            if key not in explicit:
                setattr(args, key, value)
    return args


def main(argv: Optional[Sequence[str]] = None, stdout=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.threads is None:
            args.threads = default_threads()
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Output(args.out, args.format, stdout)
        return args.func(args, out)
    except SystemExit as exc:  # argparse errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
