"""Observed-data container for a point-exposure study."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import InputError, SchemaError


@dataclass(frozen=True)
class Dataset:
    """n records of (exposure, outcome, covariates).

    Parameters
    ----------
    exposure : array_like
        Binary exposure indicator, values in {0, 1}.
    outcome : array_like
        Real-valued outcome.
    covariates : mapping of str to array_like
        Named baseline covariates. Iteration order is preserved.
    exposure_name, outcome_name : str
        Names under which model specifications refer to the exposure and
        the outcome.
    potential_outcomes : tuple of array_like, optional
        ``(y0, y1)`` when the data come from a simulation with known truth.
        Must satisfy ``outcome == exposure * y1 + (1 - exposure) * y0``.
    """

    exposure: np.ndarray
    outcome: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    exposure_name: str = "X"
    outcome_name: str = "Y"
    potential_outcomes: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        x = np.array(self.exposure, dtype=float)
        y = np.array(self.outcome, dtype=float)
        if x.ndim != 1 or y.shape != x.shape:
            raise InputError("exposure and outcome must be 1-d arrays of equal length")
        if not np.all((x == 0) | (x == 1)):
            raise InputError("exposure must take values in {0, 1}")
        if not np.all(np.isfinite(y)):
            raise InputError("outcome contains non-finite values")
        if x.sum() == 0 or x.sum() == x.size:
            raise InputError("both exposure arms must be non-empty")

        covs = {}
        for name, values in self.covariates.items():
            v = np.array(values, dtype=float)
            if v.shape != x.shape:
                raise InputError(f"covariate {name!r} has length {v.size}, expected {x.size}")
            if not np.all(np.isfinite(v)):
                raise InputError(f"covariate {name!r} contains non-finite values")
            covs[name] = v
        reserved = {self.exposure_name, self.outcome_name}
        if reserved & covs.keys():
            raise InputError(f"covariate names clash with exposure/outcome: {sorted(reserved & covs.keys())}")

        po = self.potential_outcomes
        if po is not None:
            y0, y1 = (np.array(p, dtype=float) for p in po)
            if y0.shape != x.shape or y1.shape != x.shape:
                raise InputError("potential outcomes must match the sample size")
            if not np.array_equal(y, np.where(x == 1, y1, y0)):
                raise InputError("observed outcome violates causal consistency Y = X*Y1 + (1-X)*Y0")
            po = (y0, y1)

        for arr in (x, y, *covs.values(), *(po or ())):
            arr.flags.writeable = False
        object.__setattr__(self, "exposure", x)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "potential_outcomes", po)

    @property
    def n(self) -> int:
        return self.exposure.size

    @property
    def names(self) -> list[str]:
        """All names a model specification may reference."""
        return [self.exposure_name, self.outcome_name, *self.covariates]

    def column(self, name: str) -> np.ndarray:
        if name == self.exposure_name:
            return self.exposure
        if name == self.outcome_name:
            return self.outcome
        try:
            return self.covariates[name]
        except KeyError:
            raise SchemaError(f"unknown column {name!r}; available: {self.names}") from None

    def take(self, index) -> "Dataset":
        """Subset or reorder rows."""
        index = np.asarray(index)
        po = None
        if self.potential_outcomes is not None:
            po = tuple(p[index] for p in self.potential_outcomes)
        return Dataset(
            self.exposure[index],
            self.outcome[index],
            {k: v[index] for k, v in self.covariates.items()},
            exposure_name=self.exposure_name,
            outcome_name=self.outcome_name,
            potential_outcomes=po,
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.exposure_name, self.outcome_name) != (other.exposure_name, other.outcome_name):
            return False
        if list(self.covariates) != list(other.covariates):
            return False
        if (self.potential_outcomes is None) != (other.potential_outcomes is None):
            return False
        pairs = [(self.exposure, other.exposure), (self.outcome, other.outcome)]
        pairs += [(self.covariates[k], other.covariates[k]) for k in self.covariates]
        if self.potential_outcomes is not None:
            pairs += list(zip(self.potential_outcomes, other.potential_outcomes))
        return all(np.array_equal(a, b) for a, b in pairs)

    __hash__ = None
