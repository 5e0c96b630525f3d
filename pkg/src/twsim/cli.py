"""Command-line interface: scenario runs, comparisons, reports and curve fits.

Exit codes: 0 success, 1 configuration or input error, 2 solver or fit
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path as FilePath

from .emission import fit_emission_quadratic
from .errors import (ConfigError, Diverged, FitDiverged, Infeasible, KeyMismatch,
                     MissingRun, TwsimError)
from .scenarios import ScenarioConfig, compare, render_report, report_all, run_scenario
from .tire import fit_magic_formula

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2


def _default_out() -> str:
    return os.environ.get("TWSIM_OUT", "out")


def _read_two_column_csv(path: str, columns: tuple[str, str]) -> list[tuple[float, float]]:
    try:
        with open(path, newline="") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames is None or \
                    [c.strip() for c in reader.fieldnames[:2]] != list(columns):
                raise ConfigError(f"{path}: expected CSV header {columns[0]},{columns[1]}")
            rows = [(float(row[columns[0]]), float(row[columns[1]])) for row in reader]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: malformed CSV: {exc}") from exc
    return rows


def _cmd_simulate(args) -> int:
    config = ScenarioConfig.load(args.config)
    result = run_scenario(config, out_dir=args.out)
    run_dir = FilePath(args.out) / config.key()
    print(f"wrote {run_dir}/summary.json")
    if "stopping_distance_m" in result.summary:
        print(f"stopping_distance_m = {result.summary['stopping_distance_m']:.3f}")
    print(f"pn_total = {result.summary['pn_total']:.6g}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    base = json.loads(FilePath(args.base).read_text())
    lowwear = json.loads(FilePath(args.lowwear).read_text())
    row = compare(base, lowwear)
    print(json.dumps(row, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_report(args) -> int:
    tables = report_all(args.dir)
    render_report(tables, FilePath(args.dir) / "report")
    print(f"wrote {FilePath(args.dir) / 'report' / 'tables.csv'}")
    print((FilePath(args.dir) / "report" / "tables.txt").read_text(), end="")
    return EXIT_OK


def _cmd_fit_tire(args) -> int:
    samples = _read_two_column_csv(args.input, ("slip", "mu"))
    fit = fit_magic_formula(samples)
    out = {"B": fit.coeffs.b, "C": fit.coeffs.c, "D": fit.coeffs.d,
           "E": fit.coeffs.e, "rms_residual": fit.rms_residual}
    FilePath(args.output).write_text(json.dumps(out, indent=2) + "\n")
    print(f"fit RMS residual = {fit.rms_residual:.3e} "
          f"({fit.evaluations} evaluations)")
    print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_fit_emission(args) -> int:
    samples = _read_two_column_csv(args.input, ("force_n", "pn"))
    fit = fit_emission_quadratic(samples)
    out = fit.params.to_dict()
    FilePath(args.output).write_text(json.dumps(out, indent=2) + "\n")
    print(f"R^2 = {fit.r_squared:.6f}, KKT residual = {fit.kkt_residual:.3e}, "
          f"constrained = {fit.constrained}")
    print(f"wrote {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twsim",
        description="Dual-tire-profile vehicle simulation and emission analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=_default_out())
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("compare", help="compare a base and a low-wear summary")
    p.add_argument("--base", required=True)
    p.add_argument("--lowwear", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("report", help="render comparison tables over an output dir")
    p.add_argument("--dir", default=_default_out())
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("fit-tire", help="fit slip-curve coefficients from slip,mu CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_fit_tire)

    p = sub.add_parser("fit-emission",
                       help="fit the emission quadratic from force_n,pn CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_fit_emission)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, KeyMismatch, MissingRun) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (Infeasible, Diverged, FitDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TwsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    raise SystemExit(main())
