"""Command-line front end.

Subcommands: ``price`` (one estimator run), ``weak-error`` (bias study over
step counts), ``compare`` (three-step method comparison) and ``reference``
(recompute a reference price). A config file (INI, key = value per section)
can predefine flag values per subcommand; explicit flags win.

Exit codes: 0 success, 2 configuration error, 3 work budget exhausted,
4 numerical failure (non-PD covariance or non-finite values).
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from .asgq import BudgetExhaustedError
from .experiments import (
    PARAMETER_SETS,
    run_compare,
    run_price,
    run_reference,
    run_weak_error,
    write_compare_plot,
    write_compare_summary,
    write_records_csv,
    write_timing_csv,
    write_weak_error_csv,
    write_weak_error_plot,
)
from .mathcore import NotPositiveDefiniteError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_NUMERICAL = 4

_DEFAULTS = {
    "price": dict(set=1, method="mc", steps=8, richardson=0, bridge=None,
                  tol=1e-2, samples=10**4, shifts=8, seed=0),
    "weak-error": dict(set=1, method="mc", steps="2,4,8,16,32", richardson=0,
                       samples=10**6, seed=0, scheme="hybrid"),
    "compare": dict(set=1, method="mc,qmc,asgq", tol=1e-2, samples=10**6,
                    seed=0),
    "reference": dict(set=1, steps=500, samples=8 * 10**6, seed=0),
}


class ConfigError(ValueError):
    pass


def _add_common(sub):
    sub.add_argument("--set", type=int, choices=sorted(PARAMETER_SETS))
    sub.add_argument("--seed", type=int)
    sub.add_argument("--config", type=Path)
    sub.add_argument("--out", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbergomi",
        description="Rough Bergomi call pricing via MC, lattice QMC and "
                    "adaptive sparse-grid quadrature",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("price", help="single pricing run")
    _add_common(p)
    p.add_argument("--method", choices=["mc", "qmc", "asgq"])
    p.add_argument("--steps", type=int)
    p.add_argument("--richardson", type=int, choices=[0, 1, 2])
    p.add_argument("--bridge", choices=["on", "off"])
    p.add_argument("--tol", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--shifts", type=int)

    p = subs.add_parser("weak-error", help="bias study over step counts")
    _add_common(p)
    p.add_argument("--scheme", choices=["hybrid", "exact"])
    p.add_argument("--steps", type=str, help="comma-separated step counts")
    p.add_argument("--richardson", type=int, choices=[0, 1, 2])
    p.add_argument("--samples", type=int)

    p = subs.add_parser("compare", help="method comparison at an error target")
    _add_common(p)
    p.add_argument("--method", type=str, help="comma-separated method list")
    p.add_argument("--tol", type=float, help="total relative error target")
    p.add_argument("--samples", type=int, help="samples for the bias stage")

    p = subs.add_parser("reference", help="recompute a reference price")
    _add_common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--samples", type=int)
    return parser


def _apply_config(args) -> None:
    """Fill unset flags from the config file, then fall back to defaults."""
    section = args.command
    file_values = {}
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"config file not found: {args.config}")
        ini = configparser.ConfigParser()
        try:
            ini.read(args.config)
        except configparser.Error as exc:
            raise ConfigError(f"bad config file: {exc}") from exc
        if ini.has_section(section):
            file_values = dict(ini.items(section))
    for key, default in _DEFAULTS[section].items():
        attr = key
        if getattr(args, attr, None) is None:
            if key in file_values:
                raw = file_values[key]
                caster = type(default) if default is not None else str
                try:
                    setattr(args, attr, caster(raw) if caster is not bool else raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key!r}: {raw}") from exc
            else:
                setattr(args, attr, default)


def _out_path(args, name: str) -> Path | None:
    if args.out is None:
        return None
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out / name


def _cmd_price(args) -> int:
    bridge = None if args.bridge is None else args.bridge == "on"
    record = run_price(
        set_id=args.set, method=args.method, n_steps=args.steps,
        richardson_depth=args.richardson, use_bridge=bridge, tol=args.tol,
        n_samples=args.samples, shift_count=args.shifts, seed=args.seed,
    )
    est = record.estimate
    print(
        f"set {record.set_id} {record.method} steps={record.n_steps} "
        f"richardson={record.richardson_depth} bridge={record.bridge}: "
        f"value={est.value:.6f} error={est.stat_error:.2e} "
        f"rel_err={record.relative_error:.4%} work={est.work} "
        f"wall={est.wall_seconds:.2f}s"
    )
    if args.out:
        write_records_csv(_out_path(args, "records.csv"), [record])
        write_timing_csv(_out_path(args, "records_timing.csv"), [record])
    return EXIT_OK


def _cmd_weak_error(args) -> int:
    n_list = [int(s) for s in str(args.steps).split(",") if s]
    study = run_weak_error(
        args.set, scheme=args.scheme, n_list=n_list, n_samples=args.samples,
        seed=args.seed, richardson_depth=args.richardson,
    )
    for row in study.rows:
        flag = "" if row.resolved else "  [unresolved: CI overlaps zero]"
        print(
            f"set {row.set_id} {row.scheme} N={row.n_steps}: "
            f"bias={row.bias:.3e} +- {row.ci_half_width:.3e}{flag}"
        )
    print(f"fitted weak order (slope in dt): {study.slope:.3f}")
    if args.out:
        write_weak_error_csv(_out_path(args, "weak_error.csv"), study)
        write_weak_error_plot(_out_path(args, "weak_error_plot.csv"), study)
    return EXIT_OK


def _cmd_compare(args) -> int:
    methods = tuple(m for m in str(args.method).split(",") if m)
    result = run_compare(
        args.set, methods=methods, target_rel_error=args.tol,
        seed=args.seed, bias_samples=args.samples,
    )
    for record in result.records:
        est = record.estimate
        print(
            f"{record.method}: steps={record.n_steps} "
            f"richardson={record.richardson_depth} value={est.value:.6f} "
            f"rel_err={record.relative_error:.4%} wall={est.wall_seconds:.2f}s"
        )
    if "mc" in result.wall_seconds:
        for method in methods:
            if method != "mc":
                print(f"time ratio {method}/mc: {result.time_ratio(method):.3f}")
    if args.out:
        write_records_csv(_out_path(args, "compare_records.csv"), result.records)
        write_timing_csv(_out_path(args, "compare_timing.csv"), result.records)
        write_compare_summary(_out_path(args, "compare_summary.csv"), result)
        write_compare_plot(_out_path(args, "compare_plot.csv"), result)
    return EXIT_OK


def _cmd_reference(args) -> int:
    record = run_reference(
        args.set, n_steps=args.steps, n_samples=args.samples, seed=args.seed
    )
    est = record.estimate
    published = PARAMETER_SETS[args.set].reference_price
    print(
        f"set {args.set}: recomputed reference {est.value:.6f} "
        f"+- {est.stat_error:.2e} (published {published})"
    )
    if args.out:
        write_records_csv(_out_path(args, "reference.csv"), [record])
        write_timing_csv(_out_path(args, "reference_timing.csv"), [record])
    return EXIT_OK


_COMMANDS = {
    "price": _cmd_price,
    "weak-error": _cmd_weak_error,
    "compare": _cmd_compare,
    "reference": _cmd_reference,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        return _COMMANDS[args.command](args)
    except (NotPositiveDefiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BudgetExhaustedError as exc:
        print(f"work budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
