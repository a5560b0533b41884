"""Command-line front end.

Two subcommands::

    drsandwich estimate --data trial.csv --outcome bw --exposure anemia \\
        --propensity-model "1, age, rcs(height)" --outcome-model "1, anemia, age, rcs(height)"
    drsandwich simulate --n 800 --sigma 400 --reps 5000 --seed 1 --out results/n800

Any long option can also come from ``--config FILE``, a file of
``key = value`` lines (keys are option names without the leading dashes;
dashes and underscores are interchangeable). Options given on the command
line override the file.

Exit codes: 0 success, 2 usage, 3 data ingestion, 4 model convergence,
5 other numerical failure, 1 anything else raised by the package.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import re
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import simulation as sim
from .dataset import Dataset
from .errors import (
    ConvergenceError,
    DRError,
    IngestionError,
    InputError,
    NumericalError,
    SchemaError,
    SingularDesignError,
)
from .estimators import KINDS, ModelSpecs, estimate_propensity
from .inference import InferenceOutput, analyze
from .model_matrix import parse_spec

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_INGESTION = 3
EXIT_CONVERGENCE = 4
EXIT_NUMERICAL = 5

ESTIMATE_COLUMNS = {
    "sandwich": ("es_se", "es_ci_lo", "es_ci_hi"),
    "if": ("if_se", "if_ci_lo", "if_ci_hi"),
}
ESTIMATOR_NAMES = {"classic": "Classic AIPW", "wr": "Weighted regression AIPW", "tmle": "TMLE"}


# ------------------------------------------------------------------
# Data files

def _level_name(level: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", level).strip("_") or "blank"


def ingest_csv(
    path,
    exposure: str = "X",
    outcome: str = "Y",
    covariates: Sequence[str] | None = None,
    categorical: Sequence[str] = (),
    potential_outcomes: tuple[str, str] | None = None,
) -> Dataset:
    """Read a CSV file with a header row into a :class:`Dataset`.

    Parameters
    ----------
    covariates : sequence of str, optional
        Columns to keep as covariates. Default: every column other than the
        exposure, the outcome and the potential-outcome columns.
    categorical : sequence of str
        Covariates to expand into indicator columns ``name_level``, dropping
        the first level in sorted order as the reference.
    potential_outcomes : (str, str), optional
        Column names holding ``Y0`` and ``Y1``.

    Row numbers in error messages count data rows from 1 (the header is not
    counted).
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"{path}: no such file")
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise IngestionError(f"{path}: empty file") from None
            records = [row for row in reader if row and any(c.strip() for c in row)]
    except (OSError, UnicodeDecodeError, csv.Error) as ex:
        raise IngestionError(f"{path}: {ex}") from None

    if len(set(header)) != len(header):
        raise IngestionError(f"{path}: duplicate column names in header")
    po_cols = list(potential_outcomes or ())
    if covariates is None:
        covariates = [h for h in header if h not in {exposure, outcome, *po_cols}]
    used = [exposure, outcome, *covariates, *po_cols]
    missing = [c for c in used if c not in header]
    if missing:
        raise IngestionError(f"{path}: missing columns {missing}")
    index = {h: i for i, h in enumerate(header)}

    raw: dict[str, list[str]] = {c: [] for c in used}
    for rownum, row in enumerate(records, start=1):
        if len(row) != len(header):
            raise IngestionError(f"{path}: row {rownum} has {len(row)} fields, expected {len(header)}")
        for c in used:
            v = row[index[c]].strip()
            if v == "" or v.upper() in ("NA", "NAN"):
                raise IngestionError(f"{path}: row {rownum}, column {c!r}: missing value")
            raw[c].append(v)
    if not records:
        raise IngestionError(f"{path}: no data rows")

    def numeric(col):
        out = np.empty(len(raw[col]))
        for i, v in enumerate(raw[col]):
            try:
                out[i] = float(v)
            except ValueError:
                raise IngestionError(f"{path}: row {i + 1}, column {col!r}: {v!r} is not numeric") from None
            if not math.isfinite(out[i]):
                raise IngestionError(f"{path}: row {i + 1}, column {col!r}: non-finite value")
        return out

    x = numeric(exposure)
    bad = np.flatnonzero((x != 0) & (x != 1))
    if bad.size:
        i = int(bad[0])
        raise IngestionError(
            f"{path}: row {i + 1}, column {exposure!r}: exposure value {raw[exposure][i]!r} is not 0 or 1"
        )
    y = numeric(outcome)

    covs: dict[str, np.ndarray] = {}
    for c in covariates:
        if c in categorical:
            levels = sorted(set(raw[c]))
            for level in levels[1:]:
                covs[f"{c}_{_level_name(level)}"] = np.array([v == level for v in raw[c]], dtype=float)
        else:
            covs[c] = numeric(c)
    po = tuple(numeric(c) for c in po_cols) if po_cols else None
    try:
        return Dataset(x, y, covs, exposure_name=exposure, outcome_name=outcome, potential_outcomes=po)
    except InputError as ex:
        raise IngestionError(f"{path}: {ex}") from None


def write_dataset_csv(dataset: Dataset, path, potential_outcomes: tuple[str, str] = ("Y0", "Y1")) -> None:
    """Write a dataset with full float precision (exact round trip through :func:`ingest_csv`)."""
    cols = {dataset.exposure_name: dataset.exposure, dataset.outcome_name: dataset.outcome}
    cols.update(dataset.covariates)
    if dataset.potential_outcomes is not None:
        cols.update(zip(potential_outcomes, dataset.potential_outcomes))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([repr(float(v)) for v in row])


# ------------------------------------------------------------------
# estimate

def run_estimate(args: argparse.Namespace) -> list[InferenceOutput]:
    """Fit the selected estimators and write the result table."""
    data = ingest_csv(
        args.data,
        exposure=args.exposure,
        outcome=args.outcome,
        categorical=_split_names(args.categorical),
    )
    specs = ModelSpecs(
        parse_spec(args.propensity_model, args.exposure),
        parse_spec(args.outcome_model, args.outcome),
        args.outcome_link,
    )
    specs.propensity.check(data)
    specs.outcome.check(data)
    kinds = KINDS if args.estimator == "all" else (args.estimator,)
    variances = ("sandwich", "if") if args.variance == "both" else (args.variance,)
    bounds = _parse_bounds(args.bounds)

    ps = estimate_propensity(data, specs.propensity)
    outputs = []
    for kind in kinds:
        try:
            outputs.append(analyze(kind, data, specs, bounds=bounds, level=args.level, ps=ps))
        except DRError as ex:
            raise type(ex)(f"{ESTIMATOR_NAMES[kind]}: {ex}") from ex

    rows = [_estimate_row(o, variances) for o in outputs]
    columns = ("estimator", "ace", *[c for v in variances for c in ESTIMATE_COLUMNS[v]])
    print(format_estimate_table(rows, variances, args.level))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([r[c] if c == "estimator" else repr(float(r[c])) for c in columns])
    return outputs


def _estimate_row(o: InferenceOutput, variances) -> dict:
    row = {"estimator": o.kind, "ace": o.dr}
    if "sandwich" in variances:
        row.update(es_se=o.se_sandwich, es_ci_lo=o.ci_sandwich[0], es_ci_hi=o.ci_sandwich[1])
    if "if" in variances:
        row.update(if_se=o.se_if, if_ci_lo=o.ci_if[0], if_ci_hi=o.ci_if[1])
    return row


def format_estimate_table(rows: list[dict], variances, level: float) -> str:
    pct = f"{level * 100:g}%"
    head = f"{'':<26}{'ACE':>7}"
    if "sandwich" in variances:
        head += f"{'ES-SE':>8}{'ES-' + pct + ' CI':>16}"
    if "if" in variances:
        head += f"{'IF-SE':>8}{'IF-' + pct + ' CI':>16}"
    lines = [head]
    for r in rows:
        line = f"{ESTIMATOR_NAMES[r['estimator']]:<26}{r['ace']:>7.0f}"
        for method, prefix in (("sandwich", "es"), ("if", "if")):
            if method in variances:
                ci = f"({r[prefix + '_ci_lo']:.0f}, {r[prefix + '_ci_hi']:.0f})"
                line += f"{r[prefix + '_se']:>8.0f}{ci:>16}"
        lines.append(line)
    return "\n".join(lines)


# ------------------------------------------------------------------
# simulate

def run_simulate(args: argparse.Namespace) -> list[sim.SimSummary]:
    """Run the simulation study and write results, summary and VR files."""
    config = sim.DGPConfig(n=args.n, sigma=args.sigma, seed=args.seed, replicates=args.reps)
    scenarios = _split_names(args.scenarios) or list(sim.SCENARIOS)
    kinds = KINDS if args.estimator == "all" else (args.estimator,)
    start = time.perf_counter()
    rows = sim.run_study(config, scenarios, kinds, workers=args.workers, level=args.level)
    summaries = sim.summarize(rows)
    elapsed = time.perf_counter() - start

    prefix = args.out or "simulation"
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    sim.write_results_csv(rows, f"{prefix}_results.csv")
    sim.write_summary_csv(summaries, f"{prefix}_summary.csv")
    sim.write_vr_csv(summaries, f"{prefix}_vr.csv")

    print(f"n={config.n} sigma={config.sigma:g} replicates={config.replicates} seed={config.seed}")
    print(sim.format_summary(summaries))
    excluded = sum(s.excluded for s in summaries if s.method == "es")
    print(f"excluded replicate-estimator pairs: {excluded}")
    print(f"runtime: {elapsed:.1f} s")
    return summaries


# ------------------------------------------------------------------
# argument handling

def _split_names(text) -> list[str]:
    if not text:
        return []
    if isinstance(text, (list, tuple)):
        return list(text)
    return [t for t in re.split(r"[,\s]+", text) if t]


def _parse_bounds(text):
    if text is None or text == "":
        return None
    try:
        a, b = (float(v) for v in str(text).split(","))
    except ValueError:
        raise InputError(f"--bounds expects 'a,b', got {text!r}") from None
    return (a, b)


def _level(text) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("level must be in (0, 1)")
    return v


def _positive_int(text) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drsandwich", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="file of key = value lines supplying defaults")
        p.add_argument("--estimator", choices=[*KINDS, "all"], default="all")
        p.add_argument("--level", type=_level, default=0.95, help="confidence level (default 0.95)")
        p.add_argument("--out", help="output CSV path (estimate) or file prefix (simulate)")

    est = sub.add_parser("estimate", help="estimate the ACE from a CSV file")
    common(est)
    est.add_argument("--data", required=True, help="CSV file with a header row")
    est.add_argument("--outcome", default="Y")
    est.add_argument("--exposure", default="X")
    est.add_argument("--propensity-model", required=True, help='e.g. "1, Z1, Z2, rcs(height)"')
    est.add_argument("--outcome-model", required=True, help='e.g. "1, X, Z1, X*Z1"')
    est.add_argument("--outcome-link", choices=["identity", "logit"], default=None,
                     help="outcome model link (default: identity for AIPW, logit for TMLE)")
    est.add_argument("--variance", choices=["sandwich", "if", "both"], default="both")
    est.add_argument("--bounds", help="TMLE outcome bounds 'a,b' (default: observed range)")
    est.add_argument("--categorical", help="comma-separated covariates to one-hot encode")
    est.set_defaults(func=run_estimate)

    simp = sub.add_parser("simulate", help="run the Monte Carlo study")
    common(simp)
    simp.add_argument("--n", type=_positive_int, default=800)
    simp.add_argument("--sigma", type=float, default=400.0)
    simp.add_argument("--reps", type=_positive_int, default=5000)
    simp.add_argument("--seed", type=int, default=20240101)
    simp.add_argument("--scenarios", default=",".join(sim.SCENARIOS), help="subset of CS,MO,MW,MB")
    simp.add_argument("--workers", type=_positive_int, default=None,
                      help="worker processes (default: available CPUs)")
    simp.set_defaults(func=run_simulate)
    return parser


def read_config(path) -> dict[str, str]:
    """Parse a ``key = value`` file (``#`` comments allowed)."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    cp.read_string("[run]\n" + text)
    return {k.replace("-", "_"): v for k, v in cp["run"].items()}


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command in ("estimate", "simulate"):
        try:
            values = read_config(known.config)
        except (OSError, configparser.Error) as ex:
            parser.error(f"cannot read config file: {ex}")
        subparser = parser._subparsers._group_actions[0].choices[known.command]
        dests = {a.dest: a for a in subparser._actions}
        unknown = sorted(set(values) - set(dests))
        if unknown:
            parser.error(f"unknown config keys: {unknown}")
        converted = {}
        for k, v in values.items():
            action = dests[k]
            converted[k] = action.type(v) if action.type else v
            if action.choices is not None and converted[k] not in action.choices:
                parser.error(f"config key {k}: {v!r} not in {list(action.choices)}")
            action.required = False
        subparser.set_defaults(**converted)
    return parser.parse_args(argv)


def exit_code(ex: BaseException) -> int:
    if isinstance(ex, IngestionError):
        return EXIT_INGESTION
    if isinstance(ex, (ConvergenceError, SingularDesignError)):
        return EXIT_CONVERGENCE
    if isinstance(ex, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(ex, (InputError, SchemaError)):
        return EXIT_USAGE
    return EXIT_ERROR


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    try:
        args.func(args)
    except DRError as ex:
        print(f"drsandwich {args.command}: error: {ex}", file=sys.stderr)
        return exit_code(ex)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
