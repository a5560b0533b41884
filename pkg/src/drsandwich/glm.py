"""Weighted maximum-likelihood GLMs with logit or identity link.

Fits are obtained by iteratively reweighted least squares. Each weighted
least-squares step goes through an SVD-based solve whose numerical rank is
checked, so a rank-deficient design raises instead of being silently
pseudo-inverted.

The logit link accepts responses anywhere in [0, 1] (quasi-binomial scores),
which is what the targeting step and a logit outcome model on a rescaled
continuous outcome need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .errors import ConvergenceError, InputError, SchemaError, SingularDesignError

LINKS = ("logit", "identity")

MAX_ITER = 100
COEF_TOL = 1e-10
DEVIANCE_TOL = 1e-12
# |linear predictor| beyond this means probabilities within ~1e-13 of 0 or 1
SEPARATION_ETA = 30.0


@dataclass(frozen=True)
class FittedGLM:
    coefficients: np.ndarray
    link: str
    converged: bool
    iterations: int
    deviance: float
    weights: np.ndarray | None = None
    offset: np.ndarray | None = None


def inverse_link(eta: np.ndarray, link: str) -> np.ndarray:
    if link == "logit":
        return expit(eta)
    if link == "identity":
        return eta
    raise InputError(f"unknown link {link!r}; expected one of {LINKS}")


def _matrix(design) -> np.ndarray:
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise SchemaError("design must be a 2-d matrix")
    return X


def _vector(v, n: int, what: str) -> np.ndarray | None:
    if v is None:
        return None
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = np.full(n, float(v))
    if v.shape != (n,):
        raise SchemaError(f"{what} has shape {v.shape}, expected ({n},)")
    if not np.all(np.isfinite(v)):
        raise InputError(f"{what} contains non-finite values")
    return v


def _deviance(y, mu, w, link) -> float:
    if link == "logit":
        dev = xlogy(y, y) - xlogy(y, mu) + xlogy(1 - y, 1 - y) - xlogy(1 - y, 1 - mu)
        return 2.0 * float(np.sum(w * dev))
    return float(np.sum(w * (y - mu) ** 2))


def _wls(X, z, ww) -> np.ndarray:
    sw = np.sqrt(ww)
    Xw = X * sw[:, None]
    zw = z * sw
    # column equilibration, then one step of iterative refinement
    scale = np.linalg.norm(Xw, axis=0)
    if np.any(scale == 0):
        raise SingularDesignError("design has a column that is zero on the weighted support")
    Xs = Xw / scale
    coef, _, rank, _ = np.linalg.lstsq(Xs, zw, rcond=None)
    if rank < X.shape[1]:
        raise SingularDesignError(
            f"design has rank {rank} < {X.shape[1]} columns on the weighted support"
        )
    coef = coef + np.linalg.lstsq(Xs, zw - Xs @ coef, rcond=None)[0]
    return coef / scale


def fit_glm(
    design,
    response,
    link: str = "logit",
    weights=None,
    offset=None,
    *,
    max_iter: int = MAX_ITER,
    start=None,
) -> FittedGLM:
    """Maximum-likelihood fit of ``link(E[y]) = design @ beta + offset``.

    Parameters
    ----------
    design : (n, p) array_like or DesignMatrix
    response : (n,) array_like
        In [0, 1] for the logit link.
    link : {'logit', 'identity'}
    weights : (n,) array_like, optional
        Non-negative observation weights (the score is multiplied by them).
    offset : (n,) array_like or scalar, optional
    max_iter : int
        IRLS iteration cap. Convergence is declared when the largest absolute
        coefficient change is at most 1e-10 or the relative deviance change is
        at most 1e-12.

    Returns
    -------
    FittedGLM

    Raises
    ------
    ConvergenceError
        The iteration cap was reached, or the fit ran off to fitted
        probabilities numerically 0 or 1 (separation).
    SingularDesignError
        The weighted design is rank deficient.
    """
    X = _matrix(design)
    n, p = X.shape
    y = _vector(response, n, "response")
    if y is None:
        raise InputError("response is required")
    if link not in LINKS:
        raise InputError(f"unknown link {link!r}; expected one of {LINKS}")
    if link == "logit" and (np.any(y < 0) or np.any(y > 1)):
        raise InputError("logit-link response must lie in [0, 1]")
    w = _vector(weights, n, "weights")
    if w is not None and np.any(w < 0):
        raise InputError("weights must be non-negative")
    off = _vector(offset, n, "offset")
    w_ = np.ones(n) if w is None else w
    off_ = np.zeros(n) if off is None else off

    if link == "identity":
        beta = _wls(X, y - off_, w_)
        mu = X @ beta + off_
        return FittedGLM(beta, link, True, 1, _deviance(y, mu, w_, link), w, off)

    beta = np.zeros(p) if start is None else np.asarray(start, dtype=float).copy()
    eta = X @ beta + off_
    mu = expit(eta)
    dev = _deviance(y, mu, w_, link)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        var = mu * (1.0 - mu)
        z = (eta - off_) + (y - mu) / np.where(var > 0, var, 1.0)
        beta_new = _wls(X, z, w_ * var)
        eta_new = X @ beta_new + off_
        mu_new = expit(eta_new)
        dev_new = _deviance(y, mu_new, w_, link)
        # step halving guards against the rare Newton overshoot
        halvings = 0
        while not np.isfinite(dev_new) or dev_new > dev * (1 + 1e-12) + 1e-12:
            if halvings == 30:
                break
            beta_new = 0.5 * (beta + beta_new)
            eta_new = X @ beta_new + off_
            mu_new = expit(eta_new)
            dev_new = _deviance(y, mu_new, w_, link)
            halvings += 1
        step = np.max(np.abs(beta_new - beta)) if p else 0.0
        rel_dev = abs(dev_new - dev) / (abs(dev_new) + 0.1)
        beta, eta, mu, dev = beta_new, eta_new, mu_new, dev_new
        if step <= COEF_TOL or rel_dev <= DEVIANCE_TOL:
            converged = True
            break

    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")
    active = w_ > 0
    if np.any(np.abs(eta[active]) > SEPARATION_ETA):
        raise ConvergenceError("fitted probabilities numerically 0 or 1; the data may be separated")
    return FittedGLM(beta, link, True, it, dev, w, off)


def predict(fit: FittedGLM, design, offset=None) -> np.ndarray:
    """Mean predictions ``inverse_link(design @ beta + offset)``."""
    X = _matrix(design)
    if X.shape[1] != fit.coefficients.size:
        raise SchemaError(
            f"design has {X.shape[1]} columns but the fit has {fit.coefficients.size} coefficients"
        )
    eta = X @ fit.coefficients
    off = _vector(offset, X.shape[0], "offset")
    if off is not None:
        eta = eta + off
    return inverse_link(eta, fit.link)


def score_rows(params, design, response, link: str = "logit", weights=None, offset=None) -> np.ndarray:
    """Per-observation score contributions ``w_i (y_i - mu_i) h_i``.

    Evaluable at any parameter value, not only at the fitted one, so it can be
    differentiated numerically.
    """
    X = _matrix(design)
    n, p = X.shape
    beta = np.asarray(params, dtype=float)
    if beta.shape != (p,):
        raise SchemaError(f"parameter vector has shape {beta.shape}, expected ({p},)")
    y = _vector(response, n, "response")
    eta = X @ beta
    off = _vector(offset, n, "offset")
    if off is not None:
        eta = eta + off
    r = y - inverse_link(eta, link)
    w = _vector(weights, n, "weights")
    if w is not None:
        r = w * r
    return r[:, None] * X
