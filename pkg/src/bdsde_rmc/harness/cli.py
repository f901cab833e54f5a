"""Command line entry point: ``bdsde-rmc <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings

from ..basis import basis_info_rows
from ..errors import ConfigurationError, NumericalError, ValidationError
from ..grid_paths import write_paths_csv
from ..solver import write_diagnostics_csv, write_report_csv, write_summary_json
from .config import parse_config
from .experiments import CONVERGENCE_HEADER, ORACLE_HEADER, fit_loglog_slope, oracle_check, run_convergence, run_solve, setup, thread_count, write_rows

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("bdsde_rmc")


def _levels(text: str):
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise ConfigurationError(f"levels must be a comma-separated list of integers, got {text!r}") from exc


def cmd_solve(args) -> int:
    cfg = parse_config(args.config)
    run = run_solve(cfg, workers=thread_count(), audit=True)
    out = args.out or cfg.outputs.get("report")
    summary = args.summary or cfg.outputs.get("summary")
    if out:
        write_report_csv(run.report, out)
    if summary:
        write_summary_json(run.report, summary, {"config": args.config})
    if cfg.outputs.get("diagnostics"):
        write_diagnostics_csv(run.report, cfg.outputs["diagnostics"])
    if cfg.outputs.get("paths"):
        write_paths_csv(run.batch, cfg.outputs["paths"])
    print(json.dumps(run.report.summary(), sort_keys=True))
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = parse_config(args.config)
    rows = run_convergence(cfg, args.axis, _levels(args.levels), args.replicates)
    out = args.out or cfg.outputs.get("convergence")
    if not out:
        raise ConfigurationError("convergence needs --out or outputs.convergence")
    write_rows(rows, CONVERGENCE_HEADER, out, append=args.append)
    for col in ("errY", "errZ"):
        try:
            slope, se = fit_loglog_slope(rows, "level", col)
        except ValueError:
            slope, se = float("nan"), float("nan")
        print(f"{col}: slope {slope:.4f} (stderr {se:.4f}) over {args.axis}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    cfg = parse_config(args.config)
    rows = oracle_check(cfg, args.case)
    if args.out:
        write_rows(rows, ORACLE_HEADER, args.out)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=ORACLE_HEADER)
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


def cmd_basis_info(args) -> int:
    cfg = parse_config(args.config)
    *_, basis = setup(cfg)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["k", "D_k", "blocks", "nnz_per_sample"])
        w.writerows(basis_info_rows(basis))
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bdsde-rmc", description="Regression Monte Carlo solver for backward doubly stochastic SDEs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="simulate, solve and report")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="per-step report CSV")
    s.add_argument("--summary", help="summary JSON")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("convergence", help="error sweep over N, M or L")
    c.add_argument("--config", required=True)
    c.add_argument("--axis", required=True, choices=["N", "M", "L"])
    c.add_argument("--levels", required=True, help="comma-separated, e.g. 1000,4000,16000")
    c.add_argument("--replicates", type=int, default=1)
    c.add_argument("--out")
    c.add_argument("--append", action="store_true", help="append rows to an existing CSV")
    c.set_defaults(func=cmd_convergence)

    o = sub.add_parser("oracle-check", help="compare a run with the reference solutions")
    o.add_argument("--case", required=True)
    o.add_argument("--config", required=True)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle_check)

    b = sub.add_parser("basis-info", help="basis dimensions per time step")
    b.add_argument("--config", required=True)
    b.add_argument("--out")
    b.set_defaults(func=cmd_basis_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("default")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (NumericalError, ValidationError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
