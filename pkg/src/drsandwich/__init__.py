"""Doubly robust ACE estimation with empirical sandwich inference."""

from .dataset import Dataset
from .errors import DRError
from .estimators import ModelSpecs, classic_aipw, estimate_propensity, tmle, wr_aipw
from .inference import analyze, if_variance, sandwich, wald_ci
from .model_matrix import ModelSpec, build_design, parse_spec

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DRError",
    "ModelSpec",
    "ModelSpecs",
    "analyze",
    "build_design",
    "classic_aipw",
    "estimate_propensity",
    "if_variance",
    "parse_spec",
    "sandwich",
    "tmle",
    "wald_ci",
    "wr_aipw",
]
