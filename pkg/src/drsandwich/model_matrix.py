"""Design matrices from declarative model specifications.

A :class:`ModelSpec` is an ordered tuple of terms. Terms are small frozen
dataclasses, so specifications compare and hash by value. The textual form
used on the command line is a comma-separated list::

    1, Z1, Z2, Z1*Z2, (Z1-155)^2, rcs(height, 5 35 65 95)

``1`` is the intercept, ``a*b`` a product of columns, ``(a-c)^k`` a centered
power and ``rcs(a, p1 p2 ...)`` a restricted cubic spline with knots at the
given empirical percentiles of ``a``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .dataset import Dataset
from .errors import DegenerateKnotsError, InputError, SchemaError

DEFAULT_PERCENTILES = (5.0, 35.0, 65.0, 95.0)


@dataclass(frozen=True)
class Intercept:
    def label(self) -> str:
        return "Intercept"

    def text(self) -> str:
        return "1"


@dataclass(frozen=True)
class Covariate:
    name: str

    def label(self) -> str:
        return self.name

    def text(self) -> str:
        return self.name


@dataclass(frozen=True)
class Product:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise InputError("a product term needs at least two factors")

    def label(self) -> str:
        return "*".join(self.names)

    def text(self) -> str:
        return self.label()


@dataclass(frozen=True)
class Power:
    """``(name - center) ** exponent``."""

    name: str
    center: float = 0.0
    exponent: int = 2

    def label(self) -> str:
        if self.center == 0:
            return f"{self.name}^{self.exponent}"
        sign = "-" if self.center > 0 else "+"
        return f"({self.name}{sign}{abs(self.center):g})^{self.exponent}"

    def text(self) -> str:
        return self.label()


@dataclass(frozen=True)
class Spline:
    """Restricted cubic spline of ``name`` with knots at ``percentiles``."""

    name: str
    percentiles: tuple[float, ...] = DEFAULT_PERCENTILES

    def __post_init__(self):
        p = tuple(float(v) for v in self.percentiles)
        if len(p) < 3 or any(not 0 < v < 100 for v in p) or any(b <= a for a, b in zip(p, p[1:])):
            raise InputError(f"spline percentiles must be strictly increasing in (0, 100), at least 3: {p}")
        object.__setattr__(self, "percentiles", p)

    def label(self) -> str:
        return f"rcs({self.name})"

    def text(self) -> str:
        return f"rcs({self.name}, {' '.join(f'{p:g}' for p in self.percentiles)})"


Term = Union[Intercept, Covariate, Product, Power, Spline]


def _term_names(term: Term) -> tuple[str, ...]:
    if isinstance(term, Intercept):
        return ()
    if isinstance(term, Product):
        return term.names
    return (term.name,)


def _term_key(term: Term):
    # a*b and b*a are the same column
    if isinstance(term, Product):
        return ("product", tuple(sorted(term.names)))
    return term


@dataclass(frozen=True)
class ModelSpec:
    """Ordered list of design terms plus an optional response name."""

    terms: tuple[Term, ...]
    response: str | None = None

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise InputError("a model specification needs at least one term")
        if sum(isinstance(t, Intercept) for t in terms) > 1:
            raise InputError("at most one intercept term is allowed")
        keys = [_term_key(t) for t in terms]
        if len(set(keys)) != len(keys):
            raise InputError(f"duplicate terms in specification: {self.text()}")

    @property
    def covariate_names(self) -> list[str]:
        seen: dict[str, None] = {}
        for t in self.terms:
            seen.update(dict.fromkeys(_term_names(t)))
        return list(seen)

    def check(self, dataset: Dataset) -> None:
        missing = [n for n in self.covariate_names if n not in dataset.names]
        if missing:
            raise SchemaError(f"specification references unknown columns {missing}")

    def text(self) -> str:
        return ", ".join(t.text() for t in self.terms)

    def __str__(self):
        return self.text()


# ------------------------------------------------------------------
# Textual grammar

_NAME = r"[A-Za-z_][A-Za-z0-9_.\[\]]*"
_NUM = r"(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_RE_SPLINE = re.compile(rf"^rcs\(\s*({_NAME})\s*(?:,\s*([^)]*))?\)$")
_RE_POWER = re.compile(rf"^\(\s*({_NAME})\s*([-+])\s*({_NUM})\s*\)\s*\^\s*(\d+)$")
_RE_PLAIN_POWER = re.compile(rf"^({_NAME})\s*\^\s*(\d+)$")
_RE_NAME = re.compile(rf"^{_NAME}$")


def _split_top_level(text: str) -> list[str]:
    parts, depth, buf = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise InputError(f"unbalanced parentheses in {text!r}")
        if ch == "," and depth == 0:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    if depth != 0:
        raise InputError(f"unbalanced parentheses in {text!r}")
    parts.append("".join(buf))
    return [p.strip() for p in parts]


def parse_term(text: str) -> Term:
    s = text.strip()
    if s == "1":
        return Intercept()
    m = _RE_SPLINE.match(s)
    if m:
        name, pct = m.group(1), m.group(2)
        if pct is None or not pct.strip():
            return Spline(name)
        try:
            percentiles = tuple(float(p) for p in pct.replace(",", " ").split())
        except ValueError:
            raise InputError(f"bad spline percentiles in {s!r}") from None
        return Spline(name, percentiles)
    m = _RE_POWER.match(s)
    if m:
        name, sign, num, k = m.groups()
        center = float(num) if sign == "-" else -float(num)
        return Power(name, center, int(k))
    m = _RE_PLAIN_POWER.match(s)
    if m:
        return Power(m.group(1), 0.0, int(m.group(2)))
    if "*" in s:
        factors = [f.strip() for f in s.split("*")]
        if all(_RE_NAME.match(f) for f in factors):
            return Product(tuple(factors))
    if _RE_NAME.match(s):
        return Covariate(s)
    raise InputError(f"cannot parse model term {s!r}")


def parse_spec(text: str, response: str | None = None) -> ModelSpec:
    """Parse the comma-separated term grammar into a :class:`ModelSpec`."""
    if not text or not text.strip():
        raise InputError("empty model specification")
    return ModelSpec(tuple(parse_term(t) for t in _split_top_level(text)), response)


# ------------------------------------------------------------------
# Splines

@dataclass(frozen=True)
class SplineBasis:
    knots: np.ndarray
    name: str = ""

    def __post_init__(self):
        k = np.array(self.knots, dtype=float)
        if k.ndim != 1 or k.size < 3:
            raise InputError("a restricted cubic spline needs at least 3 knots")
        if not np.all(np.isfinite(k)) or not np.all(np.diff(k) > 0):
            raise DegenerateKnotsError(f"knots must be finite and strictly increasing, got {k}")
        k.flags.writeable = False
        object.__setattr__(self, "knots", k)

    @property
    def n_columns(self) -> int:
        return self.knots.size - 1


def compute_knots(values: Sequence[float], percentiles: Sequence[float] = DEFAULT_PERCENTILES) -> np.ndarray:
    """Knots at empirical percentiles of ``values``.

    Percentiles use linear interpolation between order statistics: for sorted
    values ``v[0..n-1]`` the ``p``-th percentile is taken at fractional
    position ``(n - 1) * p / 100`` (R quantile type 7, numpy ``'linear'``).

    Raises
    ------
    DegenerateKnotsError
        If the data have fewer distinct values than requested knots, or the
        resulting knots are not strictly increasing.
    """
    v = np.asarray(values, dtype=float).ravel()
    p = np.asarray(percentiles, dtype=float)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise InputError("knot placement needs a non-empty, finite vector")
    if p.size < 3 or np.any(p <= 0) or np.any(p >= 100) or np.any(np.diff(p) <= 0):
        raise InputError("percentiles must be strictly increasing in (0, 100), at least 3 of them")
    if np.unique(v).size < p.size:
        raise DegenerateKnotsError(f"{np.unique(v).size} distinct values cannot support {p.size} knots")
    knots = np.percentile(v, p, method="linear")
    if not np.all(np.diff(knots) > 0):
        raise DegenerateKnotsError(f"percentile knots are not strictly increasing: {knots}")
    return knots


def rcs_basis(values: Sequence[float], basis: SplineBasis) -> np.ndarray:
    """Restricted cubic spline basis, Harrell's parameterization.

    Column 0 is ``x`` itself. For ``j = 1..k-2`` column ``j`` is::

        [(x - t_j)+^3 - (x - t_{k-1})+^3 (t_k - t_j)/(t_k - t_{k-1})
                      + (x - t_k)+^3 (t_{k-1} - t_j)/(t_k - t_{k-1})] / (t_k - t_1)^2

    which makes every linear combination linear beyond the boundary knots.
    """
    x = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise InputError("spline input contains non-finite values")
    t = basis.knots
    k = t.size
    norm = (t[-1] - t[0]) ** 2
    span = t[-1] - t[-2]
    tail_km1 = np.maximum(x - t[-2], 0.0) ** 3
    tail_k = np.maximum(x - t[-1], 0.0) ** 3
    out = np.empty((x.size, k - 1))
    out[:, 0] = x
    for j in range(k - 2):
        out[:, j + 1] = (
            np.maximum(x - t[j], 0.0) ** 3
            - tail_km1 * (t[-1] - t[j]) / span
            + tail_k * (t[-2] - t[j]) / span
        ) / norm
    return out


# ------------------------------------------------------------------
# Design matrices

@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    labels: tuple[str, ...]
    knots: Mapping[Spline, SplineBasis] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def build_design(
    dataset: Dataset,
    spec: ModelSpec,
    *,
    exposure: float | None = None,
    knots: Mapping[Spline, SplineBasis] | None = None,
) -> DesignMatrix:
    """Evaluate ``spec`` on ``dataset``.

    Parameters
    ----------
    exposure : {0, 1}, optional
        Replace the exposure column by this constant, giving the design for
        counterfactual predictions.
    knots : mapping, optional
        Spline bases to reuse (``DesignMatrix.knots`` from an earlier call).
        Knots not supplied are placed from the data.
    """
    spec.check(dataset)
    n = dataset.n
    knots = dict(knots or {})

    def col(name):
        if exposure is not None and name == dataset.exposure_name:
            return np.full(n, float(exposure))
        return dataset.column(name)

    blocks, labels = [], []
    for term in spec.terms:
        if isinstance(term, Intercept):
            blocks.append(np.ones((n, 1)))
            labels.append(term.label())
        elif isinstance(term, Covariate):
            blocks.append(col(term.name)[:, None])
            labels.append(term.label())
        elif isinstance(term, Product):
            v = col(term.names[0]).copy()
            for name in term.names[1:]:
                v = v * col(name)
            blocks.append(v[:, None])
            labels.append(term.label())
        elif isinstance(term, Power):
            blocks.append(((col(term.name) - term.center) ** term.exponent)[:, None])
            labels.append(term.label())
        elif isinstance(term, Spline):
            if term not in knots:
                knots[term] = SplineBasis(compute_knots(col(term.name), term.percentiles), term.name)
            b = rcs_basis(col(term.name), knots[term])
            blocks.append(b)
            labels.append(term.name)
            labels.extend(f"{term.label()}[{j}]" for j in range(1, b.shape[1]))
        else:
            raise InputError(f"unsupported term {term!r}")

    values = np.hstack(blocks) if len(blocks) > 1 else blocks[0]
    values = np.ascontiguousarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise InputError(f"design for '{spec.text()}' contains non-finite entries")
    values.flags.writeable = False
    return DesignMatrix(values, tuple(labels), knots)
