"""Propensity scores, IPTW and the three doubly robust ACE estimators.

All estimators take a fitted propensity model so that one fit can be shared
across estimators on the same data. Outcome models use the identity link by
default for the two AIPW estimators. The TMLE initial model is fit to the
outcome rescaled to [0, 1], with a logit link unless told otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .dataset import Dataset
from .errors import BoundsError, EmptyArmError, InputError, PositivityError
from .glm import FittedGLM, fit_glm, predict
from .model_matrix import DesignMatrix, ModelSpec, build_design

KINDS = ("classic", "wr", "tmle")

# probabilities are clipped into [EPS, 1 - EPS] before any logit
EPS = 1e-6


@dataclass(frozen=True)
class ModelSpecs:
    """Propensity and outcome specifications for one analysis.

    ``outcome_link=None`` picks the per-estimator default: identity for the
    AIPW estimators, logit for the TMLE initial fit.
    """

    propensity: ModelSpec
    outcome: ModelSpec
    outcome_link: str | None = None

    def link_for(self, kind: str) -> str:
        if self.outcome_link is not None:
            return self.outcome_link
        return "logit" if kind == "tmle" else "identity"


@dataclass(frozen=True)
class PropensityFit:
    model: FittedGLM
    design: DesignMatrix
    scores: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class CausalEstimate:
    """Point estimate with the pieces needed downstream.

    ``pseudo1``/``pseudo0`` are the per-observation predicted outcomes under
    exposure and no exposure, on the original outcome scale.
    """

    kind: str
    mu1: float
    mu0: float
    pseudo1: np.ndarray
    pseudo0: np.ndarray
    outcome_model: FittedGLM
    eta1: float | None = None
    eta0: float | None = None
    bounds: tuple[float, float] | None = None
    dr: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dr", self.mu1 - self.mu0)


def outcome_designs(dataset: Dataset, spec: ModelSpec) -> tuple[DesignMatrix, DesignMatrix, DesignMatrix]:
    """Observed design plus the designs with exposure set to 1 and to 0.

    Spline knots are placed once, on the observed data, and reused.
    """
    H = build_design(dataset, spec)
    H1 = build_design(dataset, spec, exposure=1, knots=H.knots)
    H0 = build_design(dataset, spec, exposure=0, knots=H.knots)
    return H, H1, H0


def iptw(exposure: np.ndarray, scores: np.ndarray) -> np.ndarray:
    x = exposure
    return x / scores + (1 - x) / (1 - scores)


def estimate_propensity(dataset: Dataset, spec: ModelSpec) -> PropensityFit:
    """Logistic propensity model and inverse probability of treatment weights."""
    if spec.response not in (None, dataset.exposure_name):
        raise InputError(f"propensity response must be the exposure {dataset.exposure_name!r}")
    G = build_design(dataset, spec)
    fit = fit_glm(G, dataset.exposure, "logit")
    e = predict(fit, G)
    tiny = np.finfo(float).eps
    if np.any(e <= tiny) or np.any(e >= 1 - tiny):
        raise PositivityError("estimated propensity scores are numerically 0 or 1")
    return PropensityFit(fit, G, e, iptw(dataset.exposure, e))


def classic_aipw(dataset: Dataset, ps: PropensityFit, outcome_spec: ModelSpec, link: str = "identity") -> CausalEstimate:
    H, H1, H0 = outcome_designs(dataset, outcome_spec)
    fit = fit_glm(H, dataset.outcome, link)
    a1, a0 = predict(fit, H1), predict(fit, H0)
    return _classic_from_predictions(dataset, ps.scores, a1, a0, fit)


def _classic_from_predictions(dataset, e, a1, a0, fit) -> CausalEstimate:
    x, y = dataset.exposure, dataset.outcome
    mu1 = np.mean((x * y - (x - e) * a1) / e)
    mu0 = np.mean(((1 - x) * y + (x - e) * a0) / (1 - e))
    return CausalEstimate("classic", float(mu1), float(mu0), a1, a0, fit)


def wr_aipw(dataset: Dataset, ps: PropensityFit, outcome_spec: ModelSpec, link: str = "identity") -> CausalEstimate:
    H, H1, H0 = outcome_designs(dataset, outcome_spec)
    fit = fit_glm(H, dataset.outcome, link, weights=ps.weights)
    b1, b0 = predict(fit, H1), predict(fit, H0)
    return CausalEstimate("wr", float(np.mean(b1)), float(np.mean(b0)), b1, b0, fit)


def scale_outcome(y, bounds: tuple[float, float] | None = None, eps: float = EPS):
    """Map ``y`` to ``(y - a) / (b - a)`` and clip into ``[eps, 1 - eps]``.

    Returns
    -------
    ystar : ndarray
    bounds : (a, b)
        ``(min(y), max(y))`` when not supplied.
    """
    y = np.asarray(y, dtype=float)
    if bounds is None:
        a, b = float(np.min(y)), float(np.max(y))
    else:
        a, b = (float(v) for v in bounds)
    if not (np.isfinite(a) and np.isfinite(b)) or b <= a:
        raise BoundsError(f"outcome bounds need a < b, got ({a}, {b})")
    if np.any(y < a) or np.any(y > b):
        raise BoundsError(f"outcome values fall outside the bounds ({a}, {b})")
    ystar = np.clip((y - a) / (b - a), eps, 1 - eps)
    return ystar, (a, b)


def fit_targeting(pseudo, arm_weights, ystar) -> float:
    """Intercept-only weighted logistic fit with offset ``logit(pseudo)``.

    Solves ``sum_i w_i (ystar_i - expit(eta + logit(pseudo_i))) = 0``; the
    left side is strictly decreasing in ``eta``, so the root is unique.
    """
    pseudo = np.asarray(pseudo, dtype=float)
    w = np.asarray(arm_weights, dtype=float)
    if not np.any(w > 0):
        raise EmptyArmError("targeting model has no observations with positive weight")
    if np.any(pseudo <= 0) or np.any(pseudo >= 1):
        raise InputError("targeting offsets need predictions strictly inside (0, 1)")
    fit = fit_glm(np.ones((pseudo.size, 1)), ystar, "logit", weights=w, offset=logit(pseudo))
    return float(fit.coefficients[0])


def tmle(
    dataset: Dataset,
    ps: PropensityFit,
    outcome_spec: ModelSpec,
    bounds: tuple[float, float] | None = None,
    link: str = "logit",
) -> CausalEstimate:
    """Targeted maximum likelihood with one weighted targeting model per arm."""
    ystar, (a, b) = scale_outcome(dataset.outcome, bounds)
    H, H1, H0 = outcome_designs(dataset, outcome_spec)
    fit = fit_glm(H, ystar, link)
    a1 = np.clip(predict(fit, H1), EPS, 1 - EPS)
    a0 = np.clip(predict(fit, H0), EPS, 1 - EPS)
    x, w = dataset.exposure, ps.weights
    eta1 = fit_targeting(a1, x * w, ystar)
    eta0 = fit_targeting(a0, (1 - x) * w, ystar)
    c1 = expit(logit(a1) + eta1) * (b - a) + a
    c0 = expit(logit(a0) + eta0) * (b - a) + a
    return CausalEstimate("tmle", float(np.mean(c1)), float(np.mean(c0)), c1, c0, fit, eta1, eta0, (a, b))


def estimate(kind: str, dataset: Dataset, ps: PropensityFit, specs: ModelSpecs, bounds=None) -> CausalEstimate:
    """Dispatch to one of the three estimators by name."""
    link = specs.link_for(kind)
    if kind == "classic":
        return classic_aipw(dataset, ps, specs.outcome, link)
    if kind == "wr":
        return wr_aipw(dataset, ps, specs.outcome, link)
    if kind == "tmle":
        return tmle(dataset, ps, specs.outcome, bounds, link)
    raise InputError(f"unknown estimator {kind!r}; expected one of {KINDS}")
