import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drsandwich import Dataset
from drsandwich.errors import DegenerateKnotsError, InputError, SchemaError
from drsandwich.model_matrix import (
    Covariate,
    Intercept,
    ModelSpec,
    Power,
    Product,
    Spline,
    SplineBasis,
    build_design,
    compute_knots,
    parse_spec,
    rcs_basis,
)


def harrell_oracle(x, knots):
    """Direct loop over the truncated-power definition, one value at a time."""
    k = len(knots)
    t = list(knots)
    rows = []
    for xi in x:
        def pos3(u):
            return u**3 if u > 0 else 0.0

        row = [xi]
        for j in range(k - 2):
            val = (
                pos3(xi - t[j])
                - pos3(xi - t[k - 2]) * (t[k - 1] - t[j]) / (t[k - 1] - t[k - 2])
                + pos3(xi - t[k - 1]) * (t[k - 2] - t[j]) / (t[k - 1] - t[k - 2])
            )
            row.append(val / (t[k - 1] - t[0]) ** 2)
        rows.append(row)
    return np.array(rows)


@pytest.fixture
def tiny():
    return Dataset(
        np.array([0.0, 1.0]),
        np.array([3.0, 5.0]),
        {"Z1": np.array([150.0, 160.0]), "Z2": np.array([1.0, 0.0])},
    )


class TestGrammar:
    def test_parse_terms(self):
        spec = parse_spec("1, Z1, Z1*Z2, (Z1-155)^2, rcs(age, 10 50 90)", "Y")
        assert spec.terms == (
            Intercept(),
            Covariate("Z1"),
            Product(("Z1", "Z2")),
            Power("Z1", 155.0, 2),
            Spline("age", (10.0, 50.0, 90.0)),
        )
        assert spec.response == "Y"

    def test_default_spline_percentiles(self):
        (term,) = parse_spec("rcs(height)").terms
        assert term.percentiles == (5.0, 35.0, 65.0, 95.0)

    def test_text_round_trip(self):
        text = "1, Z1, X*Z1*Z2, (Z1-155)^2, rcs(h, 5 35 65 95)"
        spec = parse_spec(text)
        assert parse_spec(spec.text()) == spec

    @pytest.mark.parametrize("text", ["1, 1", "Z1, Z1", "Z1*Z2, Z2*Z1", "", "  ", "Z1,, Z2", "rcs(Z1, 5 5 9)"])
    def test_rejects_bad_specs(self, text):
        with pytest.raises(InputError):
            parse_spec(text)

    def test_missing_covariate_is_schema_error(self, tiny):
        with pytest.raises(SchemaError):
            build_design(tiny, parse_spec("1, W"))

    def test_empty_terms_rejected(self):
        with pytest.raises(InputError):
            ModelSpec(())


class TestKnots:
    def test_linear_interpolation_percentiles(self):
        # hand computation: value at 0-based position (100-1)*p/100 of 1..100 is 1 + 0.99p
        knots = compute_knots(np.arange(1, 101), (5, 35, 65, 95))
        np.testing.assert_allclose(knots, [5.95, 35.65, 65.35, 95.05], rtol=0, atol=1e-12)
        # symmetric data and percentiles give knots symmetric about the midpoint 50.5
        np.testing.assert_allclose(knots + knots[::-1], 101.0, rtol=0, atol=1e-12)

    def test_constant_values_degenerate(self):
        with pytest.raises(DegenerateKnotsError):
            compute_knots(np.full(20, 3.0))

    def test_too_few_distinct_values(self):
        with pytest.raises(DegenerateKnotsError):
            compute_knots(np.array([0.0, 1.0, 0.0, 1.0]), (25, 50, 75))

    def test_ties_producing_equal_knots(self):
        values = np.r_[np.zeros(90), 1.0, 2.0, 3.0, 4.0]
        with pytest.raises(DegenerateKnotsError):
            compute_knots(values)

    @pytest.mark.parametrize("p", [(5, 50), (50, 35, 65), (0, 50, 100)])
    def test_bad_percentiles(self, p):
        with pytest.raises(InputError):
            compute_knots(np.arange(10.0), p)

    def test_basis_rejects_unsorted_knots(self):
        with pytest.raises(DegenerateKnotsError):
            SplineBasis(np.array([1.0, 3.0, 2.0]))


class TestSplineBasis:
    knots = np.array([140.0, 150.0, 158.0, 170.0])

    def test_matches_hand_coded_oracle(self):
        x = np.r_[self.knots, np.linspace(130, 185, 23)]
        got = rcs_basis(x, SplineBasis(self.knots))
        np.testing.assert_allclose(got, harrell_oracle(x, self.knots), rtol=1e-13, atol=1e-13)

    def test_zero_at_and_left_of_first_knot(self):
        got = rcs_basis(np.array([120.0, 140.0]), SplineBasis(self.knots))
        assert np.all(got[:, 1:] == 0.0)
        np.testing.assert_array_equal(got[:, 0], [120.0, 140.0])

    def test_shape(self):
        assert rcs_basis(np.arange(5.0), SplineBasis(np.array([0.5, 1.5, 2.5, 3.5, 4.0]))).shape == (5, 4)

    @pytest.mark.parametrize("side", ["left", "right"])
    def test_linear_beyond_boundary_knots(self, side, rng):
        coef = rng.normal(size=3)
        grid = np.linspace(100, 139, 40) if side == "left" else np.linspace(171, 230, 40)
        h = 1e-2

        def f(x):
            return rcs_basis(x, SplineBasis(self.knots)) @ coef

        second = (f(grid + h) - 2 * f(grid) + f(grid - h)) / h**2
        assert np.max(np.abs(second)) < 1e-6

    def test_non_finite_input(self):
        with pytest.raises(InputError):
            rcs_basis(np.array([1.0, np.nan]), SplineBasis(self.knots))


class TestBuildDesign:
    def test_intercept_only(self):
        d = Dataset(np.array([0.0, 1.0, 1.0]), np.zeros(3), {})
        G = build_design(d, parse_spec("1"))
        np.testing.assert_array_equal(np.asarray(G), np.ones((3, 1)))

    def test_hand_computed_products(self, tiny):
        D = build_design(tiny, parse_spec("1, Z1, Z2, Z1*Z2"))
        expected = np.array([[1.0, 150.0, 1.0, 150.0], [1.0, 160.0, 0.0, 0.0]])
        np.testing.assert_array_equal(np.asarray(D), expected)
        assert D.labels == ("Intercept", "Z1", "Z2", "Z1*Z2")

    def test_misspecified_outcome_design(self, tiny):
        D = build_design(tiny, parse_spec("1, X, (Z1-155)^2"))
        np.testing.assert_array_equal(np.asarray(D), [[1.0, 0.0, 25.0], [1.0, 1.0, 25.0]])

    def test_exposure_override(self, tiny):
        spec = parse_spec("1, X, X*Z1")
        D1 = build_design(tiny, spec, exposure=1)
        np.testing.assert_array_equal(np.asarray(D1), [[1.0, 1.0, 150.0], [1.0, 1.0, 160.0]])
        D0 = build_design(tiny, spec, exposure=0)
        np.testing.assert_array_equal(np.asarray(D0)[:, 1:], 0.0)

    def test_spline_knots_reused_for_counterfactuals(self, cs_sample):
        spec = parse_spec("1, X, rcs(Z1)")
        D = build_design(cs_sample, spec)
        D1 = build_design(cs_sample, spec, exposure=1, knots=D.knots)
        np.testing.assert_array_equal(np.asarray(D)[:, 2:], np.asarray(D1)[:, 2:])
        (basis,) = D.knots.values()
        np.testing.assert_allclose(basis.knots, np.percentile(cs_sample.column("Z1"), [5, 35, 65, 95]))

    def test_result_is_read_only(self, tiny):
        D = build_design(tiny, parse_spec("1, Z1"))
        with pytest.raises(ValueError):
            D.values[0, 0] = 2.0

    def test_deterministic(self, cs_sample):
        spec = parse_spec("1, Z1, Z1*Z2, rcs(Z1)")
        a = np.asarray(build_design(cs_sample, spec))
        b = np.asarray(build_design(cs_sample, spec))
        assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(12, 60))
def test_row_permutation_permutes_design(seed, n):
    rng = np.random.default_rng(seed)
    d = Dataset(
        (np.arange(n) % 2).astype(float),
        rng.normal(size=n),
        {"Z1": rng.normal(size=n), "Z2": rng.normal(size=n)},
    )
    perm = rng.permutation(n)
    spec = parse_spec("1, Z1, Z1*Z2, (Z2-0.5)^2, rcs(Z1)")
    full = np.asarray(build_design(d, spec))
    permuted = np.asarray(build_design(d.take(perm), spec))
    np.testing.assert_allclose(permuted, full[perm], rtol=1e-12, atol=1e-12)
