import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swbal.errors import DataError
from swbal.model import (
    Dataset,
    LossSpec,
    asymmetric_squared,
    check,
    indicator_link,
    polynomial_link,
    squared_error,
)


class TestLossValues:
    def test_squared(self):
        assert squared_error().value(-2.0) == 4.0
        assert squared_error().derivative(3.0) == 6.0

    def test_check_frozen(self):
        assert check(0.5).value(-1.0) == pytest.approx(0.5)
        assert check(0.3).value(1.0) == pytest.approx(0.3)
        assert check(0.3).value(-1.0) == pytest.approx(0.7)

    def test_check_kink_convention(self):
        # I(0 <= 0) = 1, so the derivative at the kink is tau - 1.
        assert check(0.5).derivative(0.0) == pytest.approx(-0.5)
        assert check(0.25).derivative(1.0) == pytest.approx(0.25)

    def test_expectile_frozen(self):
        assert asymmetric_squared(0.3).value(2.0) == pytest.approx(1.2)
        assert asymmetric_squared(0.3).value(-1.0) == pytest.approx(0.7)
        assert asymmetric_squared(0.3).derivative(0.0) == 0.0
        assert asymmetric_squared(0.3).derivative(1.0) == pytest.approx(0.6)
        assert asymmetric_squared(0.3).derivative(-1.0) == pytest.approx(-1.4)

    def test_second_derivative(self):
        assert squared_error().second_derivative(5.0) == 2.0
        assert asymmetric_squared(0.3).second_derivative(1.0) == pytest.approx(0.6)
        with pytest.raises(ValueError):
            check(0.5).second_derivative(1.0)

    def test_tau_validation(self):
        for bad in (0.0, 1.0, -0.1, 1.7, None):
            with pytest.raises(ValueError):
                check(bad)
        with pytest.raises(ValueError):
            LossSpec("squared", tau=0.5)
        with pytest.raises(ValueError):
            LossSpec("huber")

    @settings(max_examples=60, deadline=None)
    @given(
        st.sampled_from(["squared", "check", "expectile"]),
        st.floats(0.05, 0.95),
        st.floats(-20, 20),
        st.floats(-20, 20),
        st.floats(0, 1),
    )
    def test_convexity(self, kind, tau, v1, v2, lam):
        loss = LossSpec(kind, None if kind == "squared" else tau)
        mid = lam * v1 + (1 - lam) * v2
        assert loss.value(mid) <= lam * loss.value(v1) + (1 - lam) * loss.value(v2) + 1e-9

    def test_nonnegative_and_zero_at_zero(self):
        v = np.linspace(-5, 5, 101)
        for loss in (squared_error(), check(0.3), asymmetric_squared(0.7)):
            assert np.all(loss.value(v) >= 0)
            assert loss.value(0.0) == 0.0


class TestLinks:
    def test_poly_frozen(self):
        link = polynomial_link(1)
        assert link.predict(np.array([2.0]), np.array([1.0, 3.0]))[0] == pytest.approx(7.0)
        np.testing.assert_allclose(link.gradient(np.array([2.0]))[0], [1.0, 2.0])

    def test_poly_quadratic(self):
        link = polynomial_link(2)
        assert link.predict(np.array([-1.0]), np.array([0.0, 1.0, 1.0]))[0] == pytest.approx(0.0)
        np.testing.assert_allclose(link.gradient(np.array([-1.0]))[0], [1.0, -1.0, 1.0])

    def test_indicator_frozen(self):
        link = indicator_link([0.0, 1.0])
        assert link.predict(np.array([1.0]), np.array([2.0, 5.0]))[0] == pytest.approx(5.0)
        np.testing.assert_allclose(link.gradient(np.array([1.0]))[0], [0.0, 1.0])

    def test_indicator_outside_levels(self):
        with pytest.raises(DataError):
            indicator_link([0.0, 1.0]).gradient(np.array([2.0]))

    def test_indicator_level_validation(self):
        with pytest.raises(ValueError):
            indicator_link([1.0, 0.0])
        with pytest.raises(ValueError):
            indicator_link([0.0, 0.0])
        with pytest.raises(ValueError):
            indicator_link([])

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(0, 4),
        st.lists(st.floats(-3, 3), min_size=1, max_size=6),
        st.floats(-3, 3),
    )
    def test_linearity_in_beta(self, degree, betas, t):
        # g(t; beta) must equal m(t)' beta exactly.
        link = polynomial_link(degree)
        beta = np.resize(np.asarray(betas, dtype=float), link.p)
        g = link.predict(np.array([t]), beta)[0]
        m = link.gradient(np.array([t]))[0]
        assert g == pytest.approx(m @ beta, abs=1e-12, rel=1e-12)


class TestDataset:
    def test_basic(self):
        ds = Dataset(y=np.zeros(3), t=np.ones(3), x=np.ones((3, 2)))
        assert ds.n == 3 and ds.r == 2

    def test_validation(self):
        good = dict(y=np.zeros(3), t=np.ones(3), x=np.ones((3, 2)))
        with pytest.raises(DataError):
            Dataset(**{**good, "y": np.array([0.0, np.nan, 0.0])})
        with pytest.raises(DataError):
            Dataset(**{**good, "t": np.ones(4)})
        with pytest.raises(DataError):
            Dataset(**{**good, "x": np.ones(3)})
        with pytest.raises(DataError):
            Dataset(y=np.zeros(1), t=np.ones(1), x=np.ones((1, 2)))
        with pytest.raises(DataError):
            Dataset(y=np.zeros(3), t=np.ones(3), x=np.ones((3, 0)))
