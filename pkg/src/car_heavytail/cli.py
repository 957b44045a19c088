"""Command line: ``car-heavytail assign|analyze|simulate``.

Exit codes: 0 success, 2 invalid input or configuration, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .designs import MINIMIZATION, SCHEMES, DesignConfig, assign
from .errors import CarError, EstimationError, ValidationError
from .io import (
    COVARIATE_PREFIX,
    RunConfig,
    analyze,
    emit,
    load_json,
    parse_run_config,
    parse_sim_config,
    sim_rows,
    load_dataset,
)
from .sim import simulate

EXIT_OK, EXIT_INVALID, EXIT_ESTIMATION = 0, 2, 3

log = logging.getLogger("car_heavytail")


def _weights(text: str):
    try:
        return tuple(float(w) for w in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be comma-separated numbers, got {text!r}") from None


def _add_output(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="output format (default: csv)")
    p.add_argument("-o", "--output", type=Path, help="write here instead of standard output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="car-heavytail", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assign", help="assign treatments to the units of a CSV file")
    p.add_argument("data", type=Path, help="CSV with a 'stratum' column (and cov_* columns for minimization)")
    p.add_argument("--scheme", default="block", help=f"one of {', '.join(SCHEMES)} (default: block)")
    p.add_argument("--pi", type=float, default=0.5)
    p.add_argument("--block-size", type=int)
    p.add_argument("--coin-p", type=float, default=0.85)
    p.add_argument("--weights", type=_weights, help="minimization weights, e.g. 0.5,0.5")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", type=Path)

    p = sub.add_parser("analyze", help="estimate the treatment effect in a trial CSV")
    p.add_argument("data", type=Path, help="CSV with outcome, treatment, stratum columns")
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--scheme", help="design used in the trial (overrides the config)")
    p.add_argument("--pi", type=float, help="target treated probability (overrides the config)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    _add_output(p)

    p = sub.add_parser("simulate", help="run the Monte Carlo harness")
    p.add_argument("--config", type=Path, help="JSON simulation configuration")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker processes (CAR_THREADS overrides)")
    _add_output(p)
    return parser


def _read_rows(path: Path) -> tuple[list[str], list[dict]]:
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            return list(reader.fieldnames or []), rows
    except OSError as exc:
        raise ValidationError(f"cannot open {path}: {exc}") from exc


def cmd_assign(args) -> int:
    config = DesignConfig(args.scheme, args.pi, args.block_size, args.coin_p, args.weights, args.seed)
    header, rows = _read_rows(args.data)
    if "stratum" not in header:
        raise ValidationError(f"{args.data}: missing column stratum")
    strata = [r["stratum"] for r in rows]
    ids: dict[str, int] = {}
    dense = [ids.setdefault(s, len(ids)) for s in strata]
    covariates = None
    if config.scheme == MINIMIZATION:
        cov_cols = [h for h in header if h.startswith(COVARIATE_PREFIX)]
        if cov_cols:
            covariates = [[r[c] for c in cov_cols] for r in rows]
    a = assign(config, strata=dense, covariates=covariates)
    out_header = header + (["treatment"] if "treatment" not in header else [])
    fh = args.output.open("w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=out_header, lineterminator="\n")
        w.writeheader()
        for row, ai in zip(rows, a):
            w.writerow(dict(row, treatment=int(ai)))
    finally:
        if args.output:
            fh.close()
    return EXIT_OK


def cmd_analyze(args) -> int:
    config = parse_run_config(load_json(args.config)) if args.config else RunConfig()
    design = config.design
    if args.scheme or args.pi is not None:
        design = DesignConfig(args.scheme or design.scheme, design.pi if args.pi is None else args.pi,
                              design.block_size, design.coin_p, design.weights)
    config = replace(config, design=design,
                     alpha=config.alpha if args.alpha is None else args.alpha,
                     seed=config.seed if args.seed is None else args.seed)
    data = load_dataset(args.data)
    reports = analyze(data, config)
    emit(reports, args.format, args.output, stream=None if args.output else sys.stdout)
    for r in reports:
        if r.error:
            log.warning("%s: %s", r.estimator, r.error)
    if reports and all(r.method == "failed" for r in reports):
        return EXIT_ESTIMATION
    return EXIT_OK


def cmd_simulate(args) -> int:
    raw = load_json(args.config) if args.config else {}
    if args.reps is not None:
        raw["reps"] = args.reps
    if args.seed is not None:
        raw["seed"] = args.seed
    rows = []
    for labels, cfg in parse_sim_config(raw):
        log.info("simulating %s", labels)
        result = simulate(cfg, threads=args.threads)
        rows.extend(sim_rows(result, labels))
    emit(rows, args.format, args.output, stream=None if args.output else sys.stdout)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    handler = {"assign": cmd_assign, "analyze": cmd_analyze, "simulate": cmd_simulate}[args.command]
    try:
        return handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except CarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
