"""Monte Carlo study of the estimators under four specification scenarios.

Data mimic a birth-weight study: height-like ``Z1 ~ N(155, 7.6)``, binary
``Z2 ~ Bern(0.25)`` and ``Z3 ~ Bern(0.75)``, a logistic exposure model with
interactions, and normal potential outcomes whose means differ by
``25 - 5.5 Z1 - 30 Z2 + 20 Z1 Z2``; the true average causal effect is -60.

Scenarios:

* ``CS`` both working models correct
* ``MO`` outcome model misspecified as ``1, X, (Z1-155)^2``
* ``MW`` propensity model misspecified as ``1, (Z1-155)^2``
* ``MB`` both misspecified

Each replicate draws from its own random stream, derived from
``(seed, replicate)`` through :class:`numpy.random.SeedSequence`, so serial
and parallel runs produce identical numbers.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .dataset import Dataset
from .errors import DRError, InputError
from .estimators import KINDS, ModelSpecs, estimate_propensity
from .inference import analyze
from .model_matrix import ModelSpec, parse_spec

SCENARIOS = ("CS", "MO", "MW", "MB")

CORRECT_PROPENSITY = "1, Z1, Z2, Z3, Z1*Z2, Z1*Z3"
CORRECT_OUTCOME = "1, Z1, Z2, Z1*Z2, X, X*Z1, X*Z2, X*Z1*Z2"
MISSPECIFIED_PROPENSITY = "1, (Z1-155)^2"
MISSPECIFIED_OUTCOME = "1, X, (Z1-155)^2"

Z1_MEAN, Z1_SD = 155.0, 7.6
Z2_P, Z3_P = 0.25, 0.75
PS_COEF = (15.0, -0.1, 2.5, -1.0, -0.02, 0.005)  # 1, Z1, Z2, Z3, Z1*Z2, Z1*Z3
OUTCOME_COEF = (1000.0, 11.5, 100.0, -15.0, 25.0, -5.5, -30.0, 20.0)  # CORRECT_OUTCOME order


@dataclass(frozen=True)
class DGPConfig:
    n: int = 800
    sigma: float = 400.0
    seed: int = 20240101
    replicates: int = 5000

    def __post_init__(self):
        if self.n < 2:
            raise InputError("n must be at least 2")
        if not self.sigma > 0:
            raise InputError("sigma must be positive")
        if self.replicates < 1:
            raise InputError("replicates must be at least 1")


@dataclass(frozen=True)
class Scenario:
    kind: str
    propensity_spec: ModelSpec
    outcome_spec: ModelSpec

    @property
    def specs(self) -> ModelSpecs:
        # identity link everywhere, including the TMLE initial fit on the
        # rescaled outcome (an affine rescaling keeps a linear model correct)
        return ModelSpecs(self.propensity_spec, self.outcome_spec, outcome_link="identity")


def true_ace() -> float:
    """E[25 - 5.5 Z1 - 30 Z2 + 20 Z1 Z2] with E Z1 = 155, E Z2 = 0.25, independent."""
    return 25.0 - 5.5 * Z1_MEAN - 30.0 * Z2_P + 20.0 * Z1_MEAN * Z2_P


def true_propensity(z1, z2, z3) -> np.ndarray:
    b = PS_COEF
    return expit(b[0] + b[1] * z1 + b[2] * z2 + b[3] * z3 + b[4] * z1 * z2 + b[5] * z1 * z3)


def potential_outcome_mean(x, z1, z2) -> np.ndarray:
    c = OUTCOME_COEF
    return (
        c[0] + c[1] * z1 + c[2] * z2 + c[3] * z1 * z2
        + x * (c[4] + c[5] * z1 + c[6] * z2 + c[7] * z1 * z2)
    )


def replicate_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def generate_sample(config: DGPConfig, stream: int = 0) -> Dataset:
    """Draw one dataset, with potential outcomes, from stream ``stream``."""
    rng = replicate_rng(config.seed, stream)
    n = config.n
    z1 = rng.normal(Z1_MEAN, Z1_SD, n)
    z2 = (rng.random(n) < Z2_P).astype(float)
    z3 = (rng.random(n) < Z3_P).astype(float)
    x = (rng.random(n) < true_propensity(z1, z2, z3)).astype(float)
    y0 = potential_outcome_mean(0.0, z1, z2) + config.sigma * rng.standard_normal(n)
    y1 = potential_outcome_mean(1.0, z1, z2) + config.sigma * rng.standard_normal(n)
    y = np.where(x == 1, y1, y0)
    return Dataset(x, y, {"Z1": z1, "Z2": z2, "Z3": z3}, potential_outcomes=(y0, y1))


def scenario_specs(kind: str) -> tuple[ModelSpec, ModelSpec]:
    if kind not in SCENARIOS:
        raise InputError(f"unknown scenario {kind!r}; expected one of {SCENARIOS}")
    ps = MISSPECIFIED_PROPENSITY if kind in ("MW", "MB") else CORRECT_PROPENSITY
    out = MISSPECIFIED_OUTCOME if kind in ("MO", "MB") else CORRECT_OUTCOME
    return parse_spec(ps, "X"), parse_spec(out, "Y")


def scenario(kind: str) -> Scenario:
    return Scenario(kind, *scenario_specs(kind))


# ------------------------------------------------------------------
# Study

@dataclass(frozen=True)
class ReplicateRow:
    rep: int
    scenario: str
    estimator: str
    dr: float
    se_es: float
    se_if: float
    ci_es_lo: float
    ci_es_hi: float
    ci_if_lo: float
    ci_if_hi: float
    converged: bool


RESULT_COLUMNS = tuple(ReplicateRow.__dataclass_fields__)


def run_replicate(config: DGPConfig, rep: int, scenarios: Sequence[str] = SCENARIOS,
                  estimators: Sequence[str] = KINDS, level: float = 0.95) -> list[ReplicateRow]:
    data = generate_sample(config, rep)
    rows = []
    nan = math.nan
    for sc in scenarios:
        specs = scenario(sc).specs
        try:
            ps = estimate_propensity(data, specs.propensity)
        except DRError:
            ps = None
        for kind in estimators:
            out = None
            if ps is not None:
                try:
                    out = analyze(kind, data, specs, level=level, ps=ps)
                except DRError:
                    out = None
            if out is None:
                rows.append(ReplicateRow(rep, sc, kind, nan, nan, nan, nan, nan, nan, nan, False))
            else:
                rows.append(ReplicateRow(
                    rep, sc, kind, out.dr, out.se_sandwich, out.se_if,
                    *out.ci_sandwich, *out.ci_if, True,
                ))
    return rows


def _run_chunk(args):
    config, reps, scenarios, estimators, level = args
    return [row for rep in reps for row in run_replicate(config, rep, scenarios, estimators, level)]


def run_study(
    config: DGPConfig,
    scenarios: Sequence[str] = SCENARIOS,
    estimators: Sequence[str] = KINDS,
    workers: int | None = None,
    level: float = 0.95,
) -> list[ReplicateRow]:
    """Replicate-level results, one row per (replicate, scenario, estimator).

    Replicates whose fits fail are kept with ``converged=False`` and NaN
    estimates; :func:`summarize` drops them per (scenario, estimator).
    """
    for sc in scenarios:
        scenario_specs(sc)
    for kind in estimators:
        if kind not in KINDS:
            raise InputError(f"unknown estimator {kind!r}")
    scenarios, estimators = tuple(scenarios), tuple(estimators)
    workers = workers or os.cpu_count() or 1
    reps = list(range(config.replicates))
    if workers == 1:
        rows = _run_chunk((config, reps, scenarios, estimators, level))
    else:
        size = max(1, math.ceil(len(reps) / (workers * 4)))
        chunks = [reps[i:i + size] for i in range(0, len(reps), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [(config, c, scenarios, estimators, level) for c in chunks])
            rows = [row for part in parts for row in part]
    order = {s: i for i, s in enumerate(scenarios)}, {k: i for i, k in enumerate(estimators)}
    rows.sort(key=lambda r: (r.rep, order[0][r.scenario], order[1][r.estimator]))
    return rows


@dataclass(frozen=True)
class SimSummary:
    scenario: str
    estimator: str
    method: str  # 'es' (empirical sandwich) or 'if' (influence function)
    bias: float
    relative_bias: float
    ese: float
    ase: float
    ser: float
    coverage: float
    used: int
    excluded: int
    vr: np.ndarray = field(repr=False)
    reps: np.ndarray = field(repr=False)


def summarize(results: Iterable[ReplicateRow], ace: float | None = None) -> list[SimSummary]:
    """Bias, ESE, ASE, SER, coverage and variance ratios per cell.

    ``ESE`` is the sample standard deviation of the estimates with the
    ``n - 1`` denominator. ``VR_r = se_r / ESE``, so the mean VR is the SER.
    Coverage is the percentage of intervals containing ``ace``.
    """
    ace = true_ace() if ace is None else ace
    results = list(results)
    if not results:
        raise InputError("no replicate results to summarize")
    cells: dict[tuple[str, str], list[ReplicateRow]] = {}
    for r in results:
        cells.setdefault((r.scenario, r.estimator), []).append(r)

    out = []
    for (sc, kind), rows in cells.items():
        rows = sorted(rows, key=lambda r: r.rep)
        ok = [r for r in rows if r.converged]
        if len(ok) < 2:
            raise InputError(f"{sc}/{kind}: fewer than two usable replicates")
        dr = np.array([r.dr for r in ok])
        reps = np.array([r.rep for r in ok])
        bias = float(np.mean(dr) - ace)
        ese = float(np.std(dr, ddof=1))
        for method in ("es", "if"):
            se = np.array([getattr(r, f"se_{method}") for r in ok])
            lo = np.array([getattr(r, f"ci_{method}_lo") for r in ok])
            hi = np.array([getattr(r, f"ci_{method}_hi") for r in ok])
            vr = se / ese
            out.append(SimSummary(
                scenario=sc,
                estimator=kind,
                method=method,
                bias=bias,
                relative_bias=abs(bias) / abs(ace) * 100,
                ese=ese,
                ase=float(np.mean(se)),
                ser=float(np.mean(vr)),
                coverage=float(np.mean((lo <= ace) & (ace <= hi)) * 100),
                used=len(ok),
                excluded=len(rows) - len(ok),
                vr=vr,
                reps=reps,
            ))
    return out


def find(summaries: Sequence[SimSummary], scenario: str, estimator: str, method: str) -> SimSummary:
    for s in summaries:
        if (s.scenario, s.estimator, s.method) == (scenario, estimator, method):
            return s
    raise KeyError((scenario, estimator, method))


# ------------------------------------------------------------------
# Tables and CSV artifacts

SUMMARY_COLUMNS = (
    "scenario", "estimator", "bias", "relative_bias", "ese",
    "ase_es", "ser_es", "cov_es", "ase_if", "ser_if", "cov_if", "used", "excluded",
)
VR_COLUMNS = ("scenario", "estimator", "method", "rep", "vr")
ESTIMATOR_LABELS = {"classic": "Classic", "wr": "WR", "tmle": "TMLE"}


def summary_table(summaries: Sequence[SimSummary]) -> list[dict]:
    """One row per (scenario, estimator), columns in the summary-table layout."""
    rows, seen = [], []
    for s in summaries:
        if (s.scenario, s.estimator) not in seen:
            seen.append((s.scenario, s.estimator))
    for sc, kind in seen:
        es = find(summaries, sc, kind, "es")
        inf = find(summaries, sc, kind, "if")
        rows.append({
            "scenario": sc, "estimator": kind, "bias": es.bias, "relative_bias": es.relative_bias,
            "ese": es.ese, "ase_es": es.ase, "ser_es": es.ser, "cov_es": es.coverage,
            "ase_if": inf.ase, "ser_if": inf.ser, "cov_if": inf.coverage,
            "used": es.used, "excluded": es.excluded,
        })
    return rows


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_results_csv(results: Sequence[ReplicateRow], path) -> None:
    _write_csv(path, RESULT_COLUMNS, [r.__dict__ for r in results])


def write_summary_csv(summaries: Sequence[SimSummary], path) -> None:
    _write_csv(path, SUMMARY_COLUMNS, summary_table(summaries))


def write_vr_csv(summaries: Sequence[SimSummary], path) -> None:
    rows = [
        {"scenario": s.scenario, "estimator": s.estimator, "method": s.method, "rep": int(rep), "vr": float(v)}
        for s in summaries for rep, v in zip(s.reps, s.vr)
    ]
    _write_csv(path, VR_COLUMNS, rows)


def format_summary(summaries: Sequence[SimSummary]) -> str:
    """Human-readable table, one decimal (two for SERs, integers for coverage)."""
    head = f"{'Scen':<5}{'Est':<9}{'Bias':>7}{'RelB%':>7}{'ESE':>7}{'ASE_ES':>8}{'SER_ES':>8}" \
           f"{'Cov_ES':>8}{'ASE_IF':>8}{'SER_IF':>8}{'Cov_IF':>8}{'Excl':>6}"
    lines = [head, "-" * len(head)]
    for r in summary_table(summaries):
        lines.append(
            f"{r['scenario']:<5}{ESTIMATOR_LABELS.get(r['estimator'], r['estimator']):<9}"
            f"{r['bias']:>7.1f}{r['relative_bias']:>7.1f}{r['ese']:>7.1f}{r['ase_es']:>8.1f}"
            f"{r['ser_es']:>8.2f}{r['cov_es']:>8.0f}{r['ase_if']:>8.1f}{r['ser_if']:>8.2f}"
            f"{r['cov_if']:>8.0f}{r['excluded']:>6d}"
        )
    return "\n".join(lines)
