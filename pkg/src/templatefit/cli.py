"""Command line interface: single fits, toy studies, and timing benchmarks.

Exit codes: 0 on success, 1 on any input error (with a one-line
diagnostic on stderr naming the violated constraint), 2 when a fit did
not converge.  Stochastic subcommands require an explicit ``--seed``;
there is no wall-clock default, so every run is reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .histogram import model_from_dict
from .likelihood import CostFunction, Method
from .minimize import gof, minimize
from .study import bench, records_to_csv, run_study, stats_to_csv, summarize
from .toys import ToyConfig, draw, rng_stream, to_model

__all__ = ["main", "run"]

_METHOD_NAMES = tuple(m.value for m in Method)


class _CliError(Exception):
    """Input error; message goes to stderr, exit code is 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 means "not converged" here,
    # so route flag problems through the input-error path instead
    def error(self, message):
        raise _CliError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="templatefit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one JSON input file")
    p_fit.add_argument("--input", required=True, help="input JSON path")
    p_fit.add_argument("--method", default="approx", choices=_METHOD_NAMES)
    p_fit.add_argument("--output", default=None, help="result JSON path (default: stdout)")
    p_fit.add_argument(
        "--weighted",
        action="store_true",
        help="force the effective-count cost even for unit-weight input",
    )

    p_study = sub.add_parser("toy-study", help="pull study over repeated toy fits")
    p_study.add_argument("--seed", required=True, type=int)
    p_study.add_argument("--n-toys", type=int, default=1000)
    p_study.add_argument(
        "--n-mc",
        default="50,100,200,500,1000,10000",
        help="comma list of template sample sizes",
    )
    p_study.add_argument(
        "--methods",
        default="exact,conway,approx",
        help="comma list of methods to fit",
    )
    p_study.add_argument("--output", required=True, help="records CSV path")
    p_study.add_argument("--bins", type=int, default=None, help="override bin count")
    p_study.add_argument("--jobs", type=int, default=1, help="worker processes")
    p_study.add_argument(
        "--input", default=None, help="optional toy config JSON overriding the defaults"
    )

    p_bench = sub.add_parser("bench", help="per-method fit timing on one toy")
    p_bench.add_argument("--seed", required=True, type=int)
    p_bench.add_argument("--methods", default="exact,conway,approx")
    p_bench.add_argument("--bins", type=int, default=15)
    p_bench.add_argument("--n-mc", type=int, default=100)
    p_bench.add_argument("--repetitions", type=int, default=11)
    return parser


def _parse_methods(raw: str) -> list[str]:
    names = [s.strip() for s in raw.split(",") if s.strip()]
    if not names:
        raise _CliError("no methods given")
    for n in names:
        if n not in _METHOD_NAMES:
            raise _CliError(f"unknown method {n!r}; choose from {', '.join(_METHOD_NAMES)}")
    return names


def _parse_n_mc(raw: str) -> list[int]:
    try:
        values = [int(s) for s in raw.split(",") if s.strip()]
    except ValueError as exc:
        raise _CliError(f"bad --n-mc list: {exc}") from None
    if not values or any(v < 0 for v in values):
        raise _CliError("--n-mc needs a comma list of nonnegative integers")
    return values


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise _CliError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise _CliError(f"malformed JSON in {path}: {exc}") from None


def _cmd_fit(args) -> int:
    obj = _load_json(args.input)
    try:
        model = model_from_dict(obj)
    except ValueError as exc:
        raise _CliError(str(exc)) from None
    weighted = args.weighted or not model.is_unweighted()
    if weighted and args.method == "exact":
        raise _CliError(
            "method 'exact' does not support weighted input (sumw2 differs from sumw)"
        )
    try:
        cost = CostFunction(args.method, model, weighted=weighted)
        result = minimize(cost)
    except ValueError as exc:
        raise _CliError(str(exc)) from None
    p_value = None
    if result.ndof > 0:
        p_value = gof(result)
    payload = {
        "yields": [float(v) for v in result.yields],
        "errors": None
        if result.yield_errors is None
        else [float(v) for v in result.yield_errors],
        "covariance": None
        if result.covariance is None
        else [[float(v) for v in row] for row in result.covariance],
        "qmin": float(result.qmin),
        "ndof": int(result.ndof),
        "p_value": p_value,
        "converged": bool(result.converged),
        "n_evaluations": int(result.n_evaluations),
    }
    text = json.dumps(payload, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0 if result.converged else 2


def _toy_config(args) -> ToyConfig:
    if args.input:
        try:
            config = ToyConfig.from_dict(_load_json(args.input))
        except (ValueError, TypeError) as exc:
            raise _CliError(f"bad toy config: {exc}") from None
    else:
        config = ToyConfig()
    overrides = {"seed": args.seed}
    if getattr(args, "bins", None) is not None:
        overrides["nbins"] = args.bins
    return replace(config, **overrides)


def _cmd_toy_study(args) -> int:
    methods = _parse_methods(args.methods)
    grid = _parse_n_mc(args.n_mc)
    if args.n_toys < 1:
        raise _CliError("--n-toys must be at least 1")
    if args.jobs < 1:
        raise _CliError("--jobs must be at least 1")
    config = _toy_config(args)
    records = run_study(config, grid, args.n_toys, methods, jobs=args.jobs)
    stats = summarize(records)

    out = Path(args.output)
    summary_path = out.with_name(out.stem + ".summary.csv")
    out.write_text(records_to_csv(records), encoding="utf-8")
    summary_path.write_text(stats_to_csv(stats), encoding="utf-8")
    print(f"wrote {out} and {summary_path}", file=sys.stderr)

    print(f"{'method':<8} {'n_mc':>7} {'n_conv':>7} {'mean_z':>9} {'sem':>7} {'std_z':>9} {'sem':>7}")
    for s in stats:
        print(
            f"{s.method:<8} {s.n_mc:>7d} {s.n_converged:>7d} "
            f"{s.mean_z:>9.4f} {s.sem_mean:>7.4f} {s.std_z:>9.4f} {s.sem_std:>7.4f}"
        )
    return 0


def _cmd_bench(args) -> int:
    methods = _parse_methods(args.methods)
    if args.repetitions < 3:
        raise _CliError("--repetitions must be at least 3")
    config = ToyConfig(nbins=args.bins, n_mc=args.n_mc, seed=args.seed)
    toy = draw(config, rng_stream(config.seed, 0))
    try:
        model = to_model(config, toy)
    except ValueError as exc:
        raise _CliError(f"toy draw produced an unusable model: {exc}") from None
    times = bench(model, methods, repetitions=args.repetitions)
    fastest = min(times.values())
    print(f"{'method':<8} {'median_s':>12} {'ratio':>8}")
    for m in sorted(times, key=times.get):
        print(f"{m:<8} {times[m]:>12.6f} {times[m] / fastest:>8.2f}")
    return 0


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "toy-study":
            return _cmd_toy_study(args)
        return _cmd_bench(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    """Console-script wrapper."""
    sys.exit(main())
