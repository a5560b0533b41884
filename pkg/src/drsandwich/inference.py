"""Stacked estimating equations and the two variance estimators.

For each estimator the parameter vector stacks the nuisance coefficients,
the targeting corrections (TMLE only), the two causal means and their
difference::

    classic  [alpha, gamma, mu1, mu0, dr]
    wr       [alpha, beta,  mu1, mu0, dr]
    tmle     [alpha, gamma, eta1, eta0, mu1, mu0, dr]

:class:`EstimatingEquations` evaluates the per-observation estimating
functions at an arbitrary parameter value; propensity scores and outcome
predictions are recomputed from the parameter blocks on every call so that
the numerical Jacobian sees every dependence on theta. The empirical
sandwich ``A^-1 B A^-T / n`` is formed from a central-difference bread and
the outer-product meat.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from .dataset import Dataset
from .errors import ContractError, InputError, SchemaError, SingularBreadError
from .estimators import (
    EPS,
    KINDS,
    CausalEstimate,
    ModelSpecs,
    PropensityFit,
    estimate,
    estimate_propensity,
    outcome_designs,
    scale_outcome,
)
from .glm import inverse_link
from .model_matrix import build_design

ROOT_TOL = 1e-8
MAX_CONDITION = 1e12
ASYMMETRY_WARN = 1e-6
SCALAR_BLOCKS = ("eta1", "eta0", "mu1", "mu0", "dr")


@dataclass(frozen=True)
class ThetaStack:
    """Parameter vector with a named block layout."""

    kind: str
    layout: tuple[tuple[str, int], ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.dimension,):
            raise SchemaError(f"theta has shape {v.shape}, layout needs ({self.dimension},)")
        object.__setattr__(self, "values", v)

    @property
    def dimension(self) -> int:
        return sum(size for _, size in self.layout)

    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, size in self.layout:
            out[name] = slice(start, start + size)
            start += size
        return out

    def unpack(self) -> dict[str, np.ndarray]:
        return {name: self.values[s] for name, s in self.slices().items()}

    def __getitem__(self, name: str):
        block = self.values[self.slices()[name]]
        return float(block[0]) if name in SCALAR_BLOCKS else block

    @classmethod
    def pack(cls, kind: str, layout, blocks: dict) -> "ThetaStack":
        values = np.concatenate([np.atleast_1d(np.asarray(blocks[name], dtype=float)) for name, _ in layout])
        return cls(kind, tuple(layout), values)

    def with_values(self, values) -> "ThetaStack":
        return ThetaStack(self.kind, self.layout, values)


def theta_layout(kind: str, p_propensity: int, p_outcome: int) -> tuple[tuple[str, int], ...]:
    if kind == "classic":
        return (("alpha", p_propensity), ("gamma", p_outcome), ("mu1", 1), ("mu0", 1), ("dr", 1))
    if kind == "wr":
        return (("alpha", p_propensity), ("beta", p_outcome), ("mu1", 1), ("mu0", 1), ("dr", 1))
    if kind == "tmle":
        return (
            ("alpha", p_propensity), ("gamma", p_outcome), ("eta1", 1), ("eta0", 1),
            ("mu1", 1), ("mu0", 1), ("dr", 1),
        )
    raise InputError(f"unknown estimator {kind!r}; expected one of {KINDS}")


@dataclass(frozen=True)
class SandwichResult:
    A: np.ndarray
    B: np.ndarray
    V: np.ndarray
    se: float
    condition: float
    asymmetry: float


@dataclass(frozen=True)
class InferenceOutput:
    kind: str
    dr: float
    mu1: float
    mu0: float
    se_sandwich: float
    se_if: float
    ci_sandwich: tuple[float, float]
    ci_if: tuple[float, float]
    level: float
    theta: ThetaStack | None = None
    sandwich: SandwichResult | None = None
    diagnostics: dict = field(default_factory=dict)


class EstimatingEquations:
    """Per-observation estimating functions for one estimator on one dataset.

    Parameters
    ----------
    kind : {'classic', 'wr', 'tmle'}
    dataset : Dataset
    specs : ModelSpecs
    bounds : (a, b), optional
        TMLE outcome bounds; default is the observed range of the outcome.
    """

    def __init__(self, kind: str, dataset: Dataset, specs: ModelSpecs, bounds=None):
        if kind not in KINDS:
            raise InputError(f"unknown estimator {kind!r}; expected one of {KINDS}")
        self.kind = kind
        self.dataset = dataset
        self.specs = specs
        self.link = specs.link_for(kind)
        self.G = build_design(dataset, specs.propensity).values
        H, H1, H0 = outcome_designs(dataset, specs.outcome)
        self.H, self.H1, self.H0 = H.values, H1.values, H0.values
        self.x = dataset.exposure
        self.y = dataset.outcome
        self.bounds = None
        self.ystar = None
        if kind == "tmle":
            self.ystar, self.bounds = scale_outcome(dataset.outcome, bounds)
        self.layout = theta_layout(kind, self.G.shape[1], self.H.shape[1])
        self._slices = ThetaStack(kind, self.layout, np.zeros(sum(s for _, s in self.layout))).slices()
        self.clipped = 0
        self.clipped_at_solution = 0
        self.root_residual = np.nan

    @property
    def dimension(self) -> int:
        return sum(size for _, size in self.layout)

    def _values(self, theta) -> np.ndarray:
        v = theta.values if isinstance(theta, ThetaStack) else np.asarray(theta, dtype=float)
        if v.shape != (self.dimension,):
            raise SchemaError(f"theta has shape {v.shape}, expected ({self.dimension},)")
        return v

    def psi(self, theta) -> np.ndarray:
        """(n, m) matrix whose row i is the stacked estimating function at theta."""
        v = self._values(theta)
        s = self._slices
        x, y = self.x, self.y
        e = expit(self.G @ v[s["alpha"]])
        cols = [(x - e)[:, None] * self.G]
        mu1, mu0, dr = v[s["mu1"]][0], v[s["mu0"]][0], v[s["dr"]][0]

        if self.kind == "classic":
            g = v[s["gamma"]]
            cols.append((y - inverse_link(self.H @ g, self.link))[:, None] * self.H)
            a1 = inverse_link(self.H1 @ g, self.link)
            a0 = inverse_link(self.H0 @ g, self.link)
            cols.append(((x * y - (x - e) * a1) / e - mu1)[:, None])
            cols.append((((1 - x) * y + (x - e) * a0) / (1 - e) - mu0)[:, None])
        elif self.kind == "wr":
            b = v[s["beta"]]
            w = x / e + (1 - x) / (1 - e)
            cols.append((w * (y - inverse_link(self.H @ b, self.link)))[:, None] * self.H)
            cols.append((inverse_link(self.H1 @ b, self.link) - mu1)[:, None])
            cols.append((inverse_link(self.H0 @ b, self.link) - mu0)[:, None])
        else:
            g = v[s["gamma"]]
            ys = self.ystar
            lo, hi = self.bounds
            cols.append((ys - inverse_link(self.H @ g, self.link))[:, None] * self.H)
            a1 = inverse_link(self.H1 @ g, self.link)
            a0 = inverse_link(self.H0 @ g, self.link)
            clipped = np.sum((a1 < EPS) | (a1 > 1 - EPS)) + np.sum((a0 < EPS) | (a0 > 1 - EPS))
            self.clipped = int(clipped)
            a1 = np.clip(a1, EPS, 1 - EPS)
            a0 = np.clip(a0, EPS, 1 - EPS)
            q1 = expit(v[s["eta1"]][0] + logit(a1))
            q0 = expit(v[s["eta0"]][0] + logit(a0))
            cols.append((x / e * (ys - q1))[:, None])
            cols.append(((1 - x) / (1 - e) * (ys - q0))[:, None])
            cols.append((q1 * (hi - lo) + lo - mu1)[:, None])
            cols.append((q0 * (hi - lo) + lo - mu0)[:, None])

        cols.append(np.full((x.size, 1), mu1 - mu0 - dr))
        return np.hstack(cols)

    def solve(self, ps: PropensityFit | None = None) -> tuple[ThetaStack, CausalEstimate, PropensityFit]:
        """Block-sequential root of the stacked equations.

        Each nuisance model is fit by (weighted) maximum likelihood, the
        targeting corrections by their intercept-only fits, and the means in
        closed form.
        """
        if ps is None:
            ps = estimate_propensity(self.dataset, self.specs.propensity)
        est = estimate(self.kind, self.dataset, ps, self.specs, self.bounds)
        blocks = {
            "alpha": ps.model.coefficients,
            "gamma": est.outcome_model.coefficients,
            "beta": est.outcome_model.coefficients,
            "eta1": est.eta1,
            "eta0": est.eta0,
            "mu1": est.mu1,
            "mu0": est.mu0,
            "dr": est.dr,
        }
        theta = ThetaStack.pack(self.kind, self.layout, blocks)
        residual = float(np.max(np.abs(self.psi(theta).mean(axis=0))))
        self.root_residual = residual
        self.clipped_at_solution = self.clipped
        if residual > ROOT_TOL:
            warnings.warn(
                f"{self.kind}: stacked estimating equations solved only to {residual:.2e}",
                RuntimeWarning,
                stacklevel=2,
            )
        return theta, est, ps

    def bread(self, theta) -> np.ndarray:
        return numerical_bread(self.psi, self._values(theta))

    def sandwich(self, theta) -> SandwichResult:
        return sandwich_from_psi(self.psi, self._values(theta))


# ------------------------------------------------------------------
# Generic M-estimation machinery

def numerical_bread(psi: Callable[[np.ndarray], np.ndarray], theta) -> np.ndarray:
    """``A = -(1/n) sum_i d psi_i / d theta`` by central differences.

    The step for coordinate j is ``1e-6 * max(1, |theta_j|)``. Columns are
    computed in a fixed order so results do not depend on scheduling.
    """
    theta = np.asarray(theta, dtype=float)
    m = theta.size
    A = np.empty((m, m))
    for j in range(m):
        h = 1e-6 * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        A[:, j] = -(psi(up).mean(axis=0) - psi(dn).mean(axis=0)) / (up[j] - dn[j])
    return A


def meat_matrix(psi_values) -> np.ndarray:
    """``B = (1/n) sum_i psi_i psi_i^T``."""
    P = np.asarray(psi_values, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if not np.all(np.isfinite(P)):
        raise InputError("estimating function values contain non-finite entries")
    return (P.T @ P) / P.shape[0]


def _equilibrated_inverse(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse of ``A`` through its row/column equilibrated form.

    The reported condition number is that of the equilibrated matrix, which
    does not depend on the units of the covariates.
    """
    absA = np.abs(A)
    r = absA.max(axis=1)
    if np.any(r == 0) or not np.all(np.isfinite(A)):
        raise SingularBreadError("bread matrix has a zero or non-finite row")
    r = 1.0 / r
    c = (absA * r[:, None]).max(axis=0)
    if np.any(c == 0):
        raise SingularBreadError("bread matrix has a zero column")
    c = 1.0 / c
    S = A * r[:, None] * c[None, :]
    cond = float(np.linalg.cond(S))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularBreadError(f"bread matrix condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    try:
        inv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        raise SingularBreadError("bread matrix is singular") from None
    return c[:, None] * inv * r[None, :], cond


def sandwich_from_psi(psi: Callable[[np.ndarray], np.ndarray], theta) -> SandwichResult:
    """Empirical sandwich covariance of the M-estimator at ``theta``.

    Returns ``V = A^-1 B A^-T / n`` (symmetrized) and the standard error of
    the last parameter.
    """
    theta = np.asarray(theta, dtype=float)
    P = psi(theta)
    n = P.shape[0]
    A = numerical_bread(psi, theta)
    B = meat_matrix(P)
    Ainv, cond = _equilibrated_inverse(A)
    V = Ainv @ B @ Ainv.T / n
    scale = np.max(np.abs(V))
    asym = float(np.max(np.abs(V - V.T)) / scale) if scale > 0 else 0.0
    if asym > ASYMMETRY_WARN:
        warnings.warn(f"sandwich covariance asymmetry {asym:.2e} before symmetrization", RuntimeWarning, stacklevel=2)
    V = 0.5 * (V + V.T)
    return SandwichResult(A, B, V, float(np.sqrt(max(V[-1, -1], 0.0))), cond, asym)


# ------------------------------------------------------------------
# Functional interface

def psi_rows(kind: str, dataset: Dataset, specs: ModelSpecs, theta, bounds=None) -> np.ndarray:
    return EstimatingEquations(kind, dataset, specs, bounds).psi(theta)


def solve_theta(kind: str, dataset: Dataset, specs: ModelSpecs, bounds=None) -> ThetaStack:
    return EstimatingEquations(kind, dataset, specs, bounds).solve()[0]


def bread_matrix(kind: str, dataset: Dataset, specs: ModelSpecs, theta_hat, bounds=None) -> np.ndarray:
    return EstimatingEquations(kind, dataset, specs, bounds).bread(theta_hat)


def sandwich(kind: str, dataset: Dataset, specs: ModelSpecs, bounds=None) -> SandwichResult:
    ee = EstimatingEquations(kind, dataset, specs, bounds)
    theta, _, _ = ee.solve()
    return ee.sandwich(theta)


def if_variance(est: CausalEstimate, ps: PropensityFit, dataset: Dataset) -> float:
    """Influence-function standard error ``sqrt(n^-2 sum_i I_i^2)``.

    ``I_i = X Y / e - (1-X) Y / (1-e) - (X-e)/(e(1-e)) {(1-e) Yhat1 + e Yhat0} - DR``
    with the estimator's own pseudo-outcomes ``Yhat1``, ``Yhat0``.
    """
    if est.pseudo1 is None or est.pseudo0 is None:
        raise ContractError("influence-function variance needs the estimate's pseudo-outcomes")
    x, y, e = dataset.exposure, dataset.outcome, ps.scores
    infl = (
        x * y / e
        - (1 - x) * y / (1 - e)
        - (x - e) / (e * (1 - e)) * ((1 - e) * est.pseudo1 + e * est.pseudo0)
        - est.dr
    )
    n = y.size
    return float(np.sqrt(np.sum(infl**2) / n**2))


def wald_ci(point: float, se: float, level: float = 0.95) -> tuple[float, float]:
    if not 0 < level < 1:
        raise InputError(f"confidence level must be in (0, 1), got {level}")
    if se < 0 or not np.isfinite(se):
        raise InputError(f"standard error must be finite and non-negative, got {se}")
    z = norm.ppf(0.5 + level / 2)
    return (float(point - z * se), float(point + z * se))


def analyze(
    kind: str,
    dataset: Dataset,
    specs: ModelSpecs,
    bounds=None,
    level: float = 0.95,
    ps: PropensityFit | None = None,
) -> InferenceOutput:
    """Point estimate with sandwich and influence-function inference."""
    ee = EstimatingEquations(kind, dataset, specs, bounds)
    theta, est, ps = ee.solve(ps)
    sw = ee.sandwich(theta)
    se_if = if_variance(est, ps, dataset)
    return InferenceOutput(
        kind=kind,
        dr=est.dr,
        mu1=est.mu1,
        mu0=est.mu0,
        se_sandwich=sw.se,
        se_if=se_if,
        ci_sandwich=wald_ci(est.dr, sw.se, level),
        ci_if=wald_ci(est.dr, se_if, level),
        level=level,
        theta=theta,
        sandwich=sw,
        diagnostics={
            "clipped": ee.clipped_at_solution,
            "root_residual": ee.root_residual,
            "condition": sw.condition, "asymmetry": sw.asymmetry,
        },
    )
