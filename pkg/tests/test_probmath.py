import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psbss.probmath import (
    DomainError,
    binomial_tail,
    db_to_linear,
    dbm_to_mw,
    linear_to_db,
    q_function,
    q_inverse,
)

from _oracles import enumerate_tail, gaussian_tail


class TestQFunction:
    def test_median(self):
        assert q_function(0.0) == 0.5

    @pytest.mark.parametrize("x, expected, tol", [(1.281552, 0.1, 1e-6), (3.0, 0.0013499, 1e-7)])
    def test_reference_values(self, x, expected, tol):
        assert abs(q_function(x) - expected) <= tol

    @given(st.floats(-8, 8))
    def test_symmetry(self, x):
        assert abs(q_function(-x) - (1.0 - q_function(x))) <= 1e-12

    @given(st.floats(-30, 30))
    def test_matches_stdlib_erfc(self, x):
        ref = gaussian_tail(x)
        assert q_function(x) == pytest.approx(ref, rel=1e-12, abs=1e-300)

    def test_strictly_decreasing(self):
        vals = np.array([q_function(x) for x in np.linspace(-6, 6, 1000)])
        assert np.all(np.diff(vals) < 0)

    def test_upper_tail_keeps_relative_precision(self):
        # 1 - Phi(10) would underflow to 0 in naive evaluation
        assert q_function(10.0) == pytest.approx(7.61985302416047e-24, rel=1e-10)

    @pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(DomainError):
            q_function(bad)


class TestQInverse:
    def test_median(self):
        assert q_inverse(0.5) == 0.0

    @pytest.mark.parametrize("p, expected", [(0.9, -1.281552), (0.05, 1.644854)])
    def test_reference_values(self, p, expected):
        assert abs(q_inverse(p) - expected) <= 1e-6

    @given(st.floats(1e-12, 1 - 1e-12))
    def test_round_trip_probability(self, p):
        assert q_function(q_inverse(p)) == pytest.approx(p, rel=1e-9)

    def test_round_trip_argument(self):
        for x in np.linspace(-5, 5, 201):
            assert abs(q_inverse(q_function(x)) - x) <= 1e-8

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
    def test_outside_open_interval_rejected(self, bad):
        with pytest.raises(DomainError):
            q_inverse(bad)


class TestBinomialTail:
    def test_three_voters(self):
        assert binomial_tail(3, 2, 0.25) == pytest.approx(0.15625, abs=1e-15)

    def test_single_voter(self):
        assert binomial_tail(1, 1, 0.25) == 0.25

    def test_full_tail(self):
        assert binomial_tail(3, 0, 0.7) == 1.0

    def test_k_above_n_is_zero(self):
        assert binomial_tail(3, 4, 0.5) == 0.0

    def test_matches_enumeration(self):
        for n in range(1, 13):
            for k in range(0, n + 2):
                for p in np.round(np.arange(0.1, 1.0, 0.1), 10):
                    assert abs(binomial_tail(n, k, p) - enumerate_tail(n, k, p)) <= 1e-12

    @given(st.integers(1, 64), st.integers(0, 65), st.floats(0, 1))
    def test_is_a_probability(self, n, k, p):
        v = binomial_tail(n, k, p)
        assert 0.0 <= v <= 1.0
        assert v + (1.0 - v) == 1.0

    @pytest.mark.parametrize("p", [-0.01, 1.01, math.nan])
    def test_invalid_probability(self, p):
        with pytest.raises(DomainError):
            binomial_tail(4, 2, p)


class TestDecibels:
    def test_zero_db(self):
        assert db_to_linear(0.0) == 1.0

    def test_minus_fifteen_db(self):
        assert abs(db_to_linear(-15.0) - 0.0316228) <= 1e-7

    def test_dbm(self):
        assert dbm_to_mw(20.0) == pytest.approx(100.0, rel=1e-15)

    @given(st.floats(-200, 200))
    def test_round_trip(self, x):
        assert linear_to_db(db_to_linear(x)) == pytest.approx(x, rel=1e-12, abs=1e-12)

    def test_non_positive_rejected(self):
        with pytest.raises(DomainError):
            linear_to_db(0.0)
