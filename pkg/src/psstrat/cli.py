"""Command-line front end: ``psstrat {estimate,balance,aggregate,simulate}``.

Exit codes: 0 success, 1 input or model error (one ``error: Kind: message``
line on stderr), 2 report written but stratification left score imbalance
unresolved, 3 too many failed simulation replications.
"""

from __future__ import annotations

import argparse
import csv
import sys
from collections.abc import Mapping
from typing import Optional, Sequence

import yaml

from . import __version__, report
from .analysis import AnalysisConfig, run_analysis
from .dataset import CsvSchema, load_csv, write_csv
from .errors import PsstratError, SchemaError, SimulationFailure
from .estimators import aggregate_strata
from .simulate import PRESETS, DgpConfig, generate, monte_carlo, replication_seed

EXIT_OK, EXIT_ERROR, EXIT_UNRESOLVED, EXIT_SIMULATION = 0, 1, 2, 3


def _read_yaml(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise SchemaError(f"{path}: invalid YAML ({type(exc).__name__})") from None
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise SchemaError(f"{path}: expected a mapping at the top level")
    return dict(data)


def _analysis_inputs(args) -> tuple[AnalysisConfig, CsvSchema]:
    """Config file values with command-line flags layered on top."""
    data = _read_yaml(args.config) if args.config else {}
    schema = CsvSchema.from_mapping(data.pop("schema", None))
    config = AnalysisConfig.from_mapping(data).replace(
        weighting=args.weighting, alpha=args.alpha, min_count=args.min_count)
    return config, schema


def _write(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _write_file(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _cmd_analysis(args, estimate: bool) -> int:
    config, schema = _analysis_inputs(args)
    dataset = load_csv(args.data, schema)
    result = run_analysis(dataset, config, estimate_effects=estimate)
    inputs = {"data": args.data, "schema": {
        "id": schema.id, "treatment": schema.treatment, "outcome": schema.outcome,
        "covariates": None if schema.covariates is None else list(schema.covariates),
        "ignore": list(schema.ignore)}}
    if args.format == "json":
        doc = report.analysis_report(result, __version__, inputs)
        if not estimate:
            doc["kind"] = "balance_report"
        text = report.dumps(doc)
    elif args.format == "text":
        text = report.render_text(result)
    else:
        text = report.effects_csv(result) if estimate else report.balance_csv(result)
    _write(text, args.out)
    if args.plot_csv:
        _write_file(args.plot_csv, report.balance_csv(result))
    return EXIT_OK if result.resolved else EXIT_UNRESOLVED


def cmd_estimate(args) -> int:
    return _cmd_analysis(args, estimate=True)


def cmd_balance(args) -> int:
    return _cmd_analysis(args, estimate=False)


def _read_strata_csv(path: str) -> list[tuple[float, float, float, float]]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror}") from None
    rows = []
    for i, cells in enumerate(lines, start=1):
        if len(cells) != 4:
            raise SchemaError(f"{path}: row {i} has {len(cells)} columns, expected 4 "
                              f"(n_t, n_c, effect, se)")
        try:
            rows.append(tuple(float(c) for c in cells))
        except ValueError:
            if i == 1:
                continue  # header
            raise SchemaError(f"{path}: row {i} is not numeric: {','.join(cells)}") from None
    if not rows:
        raise SchemaError(f"{path}: no stratum rows")
    return rows


def cmd_aggregate(args) -> int:
    rows = _read_strata_csv(args.data)
    weighting = {"total": "total_units", "treated": "treated_units"}[args.weighting or "total"]
    est = aggregate_strata(rows, weighting, args.level)
    if args.format == "json":
        text = report.dumps({"schema_version": report.SCHEMA_VERSION, "kind": "aggregate",
                             "tool": {"name": report.TOOL_NAME, "version": __version__},
                             "inputs": {"data": args.data}, **est.to_dict()})
    elif args.format == "text":
        text = report.render_estimate_text(est)
    else:
        text = report.aggregate_csv(est)
    _write(text, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.config and args.preset:
        raise SchemaError("give either --config or --preset, not both")
    config = DgpConfig.from_yaml(args.config) if args.config else DgpConfig.preset(args.preset or "confounded")
    config = config.replace(seed=args.seed, reps=args.reps)
    analysis = config.analysis.replace(weighting=args.weighting, alpha=args.alpha,
                                       min_count=args.min_count)
    config = config.replace(analysis=analysis)
    if args.emit_data:
        write_csv(generate(config, replication_seed(config.seed, 0)).dataset, args.emit_data)
    try:
        result = monte_carlo(config, workers=args.workers)
    except SimulationFailure as exc:
        print(f"error: {exc.kind}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_SIMULATION
    if args.format == "json":
        doc = result.to_dict()
        doc["tool"] = {"name": report.TOOL_NAME, "version": __version__}
        text = report.dumps(doc)
    elif args.format == "text":
        text = report.render_bias_text(result)
    else:
        text = report.bias_csv(result)
    _write(text, args.out)
    return EXIT_OK


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psstrat", description="Propensity-score subclassification for binary outcomes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, formats=("json", "text", "csv")):
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=formats, default="json")
        p.add_argument("--weighting", choices=("total", "treated"),
                       help="stratum weights: stratum size or treated count")

    def tuning(p):
        p.add_argument("--alpha", type=float, help="significance level of balance tests")
        p.add_argument("--min-count", type=int, dest="min_count",
                       help="minimum treated and control units per stratum")

    for name, fn, helptext in (("estimate", cmd_estimate, "full analysis with effect estimates"),
                               ("balance", cmd_balance, "stratification and balance diagnostics only")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, help="CSV with id, z, y and covariate columns")
        p.add_argument("--config", help="YAML file of analysis settings and a 'schema' mapping")
        p.add_argument("--plot-csv", dest="plot_csv", help="also write long-format balance CSV here")
        common(p)
        tuning(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("aggregate", help="combine per-stratum effects")
    p.add_argument("--data", required=True, help="CSV rows of n_t, n_c, effect, se")
    p.add_argument("--level", type=float, default=0.95, help="confidence level")
    common(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("simulate", help="Monte Carlo bias study on a synthetic design")
    p.add_argument("--config", help="YAML data-generating process")
    p.add_argument("--preset", choices=PRESETS, help="shipped design (default: confounded)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--reps", type=int, help="number of replications")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--emit-data", dest="emit_data", help="write replication 0's dataset as CSV")
    common(p)
    tuning(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PsstratError as exc:
        print(f"error: {exc.kind}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
