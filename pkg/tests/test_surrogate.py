import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psbss import conic
from psbss.driver import seed_point, violation
from psbss.probmath import DomainError
from psbss.rates import BeamformerSet, chi_terms, psbss_weights, user_rate
from psbss.surrogate import (
    ExpansionError,
    SubproblemSpec,
    align_phases,
    build_subproblem,
    coefficients,
    complexity_estimate,
    expansion_point,
    lift,
    lower_bound_value,
    surrogate_rates,
)


def truth(phi, tau):
    return np.log1p(1.0 / phi) / tau


@pytest.fixture(scope="module")
def setting():
    from psbss.prediction import TrafficModel
    from psbss.scenario import fixed_layout
    from psbss.sensing import probability_profile

    s = fixed_layout()
    w = psbss_weights(probability_profile(TrafficModel.from_intensity(0.4), 6, 0.1, 0.9).cases)
    b = seed_point(s, w)
    return s, w, b, expansion_point(s, b, w)


@pytest.fixture(scope="module")
def solved(setting):
    s, w, _, pt = setting
    spec = build_subproblem(s, w, pt)
    res = conic.solve(conic.lower(spec))
    return spec, res


class TestCoefficients:
    def test_reference_point(self):
        co = coefficients(1.0, 2.0)
        assert co.a == pytest.approx(0.943147, abs=1e-6)
        assert co.b == pytest.approx(0.25, abs=1e-15)
        assert co.c == pytest.approx(0.173287, abs=1e-6)
        assert co.a - co.b - 2 * co.c == pytest.approx(math.log(2) / 2, abs=1e-12)

    def test_bound_away_from_expansion(self):
        v = lower_bound_value(coefficients(1.0, 2.0), 2.0, 3.0)
        assert v == pytest.approx(-0.076713, abs=1e-6)
        assert v <= math.log(1.5) / 3

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 100.0), st.floats(1.01, 50.0))
    def test_tangent_identity(self, phi, tau):
        co = coefficients(phi, tau)
        assert lower_bound_value(co, phi, tau) == pytest.approx(truth(phi, tau), rel=1e-12, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.1, 20.0), st.floats(1.1, 20.0))
    def test_gradient_matches_central_differences(self, phi, tau):
        co = coefficients(phi, tau)
        h = 1e-5
        d_phi = (truth(phi + h, tau) - truth(phi - h, tau)) / (2 * h)
        d_tau = (truth(phi, tau + h) - truth(phi, tau - h)) / (2 * h)
        assert -co.b == pytest.approx(d_phi, rel=1e-6)
        assert -co.c == pytest.approx(d_tau, rel=1e-6)

    def test_vanishing_rate(self):
        assert coefficients(1e8, 2.0).c < 1e-8

    def test_global_lower_bound(self, rng):
        for _ in range(1000):
            pn, tn = rng.uniform(0.1, 100), rng.uniform(1.01, 50)
            p, t = rng.uniform(0.1, 100), rng.uniform(1.01, 50)
            assert lower_bound_value(coefficients(pn, tn), p, t) <= truth(p, t) + 1e-12

    @pytest.mark.parametrize("phi, tau", [(0.0, 2.0), (-1.0, 2.0), (1.0, 1.0), (1.0, 0.5), (math.nan, 2.0)])
    def test_domain(self, phi, tau):
        with pytest.raises(DomainError):
            coefficients(phi, tau)


class TestComplexity:
    def test_reference_sizes(self):
        assert complexity_estimate(8, 6, 3) == pytest.approx(133**2 * math.sqrt(71) * 204)
        assert complexity_estimate(8, 6, 3) == pytest.approx(3.04e7, rel=5e-3)
        assert complexity_estimate(1, 1, 0) == pytest.approx(6.43e3, rel=5e-3)

    def test_monotone(self):
        base = complexity_estimate(4, 3, 2)
        assert complexity_estimate(5, 3, 2) > base
        assert complexity_estimate(4, 4, 2) > base
        assert complexity_estimate(4, 3, 3) > base


class TestExpansionPoint:
    def test_phases_aligned(self, setting):
        s, _, _, pt = setting
        for w in (pt.w0, pt.w1):
            proj = np.einsum("kn,kn->k", s.h.conj(), w)
            np.testing.assert_allclose(proj.imag, 0.0, atol=1e-12)
            assert np.all(proj.real > 0)

    def test_alignment_keeps_rates(self, setting):
        s, w, b, _ = setting
        spun = BeamformerSet(b.w0 * 1j, b.w1 * np.exp(0.3j), b.t_s)
        a = align_phases(s, spun)
        for k in range(s.n_sus):
            assert user_rate(s, w, a, k) == pytest.approx(user_rate(s, w, b, k), rel=1e-12)

    def test_rejects_points_outside_trust_region(self, setting):
        s, w, b, _ = setting
        bad = BeamformerSet(b.w0, np.zeros_like(b.w1), b.t_s)
        with pytest.raises(ExpansionError):
            expansion_point(s, bad, w)

    def test_rejects_tau_at_one(self, setting):
        s, w, b, _ = setting
        with pytest.raises(ExpansionError):
            expansion_point(s, BeamformerSet(b.w0, b.w1, -s.t_pr), w)


class TestMinorant:
    def test_tight_at_expansion_point(self, setting):
        s, w, _, pt = setting
        sur = surrogate_rates(s, pt, pt.beams)
        for k in range(s.n_sus):
            assert sur[k] == pytest.approx(user_rate(s, w, pt.beams, k), abs=1e-9)

    def test_lifted_objective_is_tight(self, setting):
        s, w, _, pt = setting
        spec = build_subproblem(s, w, pt)
        x = lift(spec, s, pt, pt.beams)
        total = sum(user_rate(s, w, pt.beams, k) for k in range(s.n_sus))
        assert spec.objective_value(x) == pytest.approx(total, abs=1e-9)

    def test_minorizes_on_random_points(self, setting, rng):
        s, w, _, pt = setting
        checked = 0
        for _ in range(1000):
            scale = rng.uniform(0.2, 1.5)
            noise = lambda a: 0.3 * np.abs(a).max() * (rng.normal(size=a.shape) + 1j * rng.normal(size=a.shape))
            tau = pt.tau * rng.uniform(1.0, 1.2)
            t_s = s.slot - s.t_pr - s.slot / tau
            b = BeamformerSet(scale * pt.w0 + noise(pt.w0), scale * pt.w1 + noise(pt.w1), t_s)
            lin_ok = True
            for i in (0, 1):
                beams = b.beams(i)
                re = np.einsum("kn,kn->k", s.h.conj(), beams).real
                lin = 2 * pt.r[i] * re - pt.r[i] ** 2 - s.delta * np.sum(np.abs(beams) ** 2, axis=1)
                lin_ok &= bool(np.all(lin > 0))
            if not lin_ok:
                continue
            checked += 1
            sur = surrogate_rates(s, pt, b)
            for k in range(s.n_sus):
                assert sur[k] <= user_rate(s, w, b, k) + 1e-12
        assert checked > 100


class TestSubproblem:
    def test_variable_count(self, setting):
        s, w, _, pt = setting
        spec = build_subproblem(s, w, pt)
        assert spec.decision_count == (2 * 8 + 6) * 6 + 1 == 133
        assert spec.n_vars == (4 * 8 + 6) * 6 + 1

    def test_constraint_counts(self, setting):
        s, w, _, pt = setting
        counts = build_subproblem(s, w, pt).constraint_counts()
        assert counts == {"linear": 3 * 6 + 1, "quadratic": 8 * 6 + 3 + 1}

    def test_initialization_mode(self, setting):
        s, w, _, pt = setting
        main = build_subproblem(s, w, pt)
        init = build_subproblem(s, w, pt, mode="initialization")
        assert init.n_vars == main.n_vars + 1
        assert init.count("maxmin_epi") == 6
        assert main.count("maxmin_epi") == 0
        assert main.count("min_rate") == 6 and init.count("min_rate") == 0

    def test_unknown_mode(self, setting):
        s, w, _, pt = setting
        with pytest.raises(ValueError):
            build_subproblem(s, w, pt, mode="other")

    def test_text_round_trip(self, setting):
        s, w, _, pt = setting
        spec = build_subproblem(s, w, pt)
        back = SubproblemSpec.from_text(spec.to_text())
        x = lift(spec, s, pt, pt.beams)
        assert back.n_vars == spec.n_vars
        assert back.constraint_counts() == spec.constraint_counts()
        assert back.objective_value(x) == spec.objective_value(x)
        assert back.max_violation(x) == spec.max_violation(x)

    def test_expansion_point_is_feasible(self, setting):
        s, w, _, pt = setting
        spec = build_subproblem(s, w, pt, mode="initialization")
        x = lift(spec, s, pt, pt.beams)
        assert spec.max_violation(x) <= 1e-9

    def test_optimum_improves_and_is_tight(self, setting, solved):
        s, w, _, pt = setting
        spec, res = solved
        assert res.ok
        x = res.x
        vals = spec.decode(x)
        b = spec.beamformers(x, s)
        for i in (0, 1):
            beams = b.beams(i)
            re = np.einsum("kn,kn->k", s.h.conj(), beams).real
            lin = 2 * pt.r[i] * re - pt.r[i] ** 2 - s.delta * np.sum(np.abs(beams) ** 2, axis=1)
            np.testing.assert_allclose(vals[f"omega{i}"], lin, rtol=1e-6)
        for c in ("00", "01", "10", "11"):
            i = int(c[1])
            chi = np.array([chi_terms(s, b, k)[c] for k in range(s.n_sus)])
            np.testing.assert_allclose(vals[f"theta{c}"] * vals[f"omega{i}"], chi, rtol=1e-6)

    def test_feasible_set_nesting(self, setting, solved):
        s, w, _, _ = setting
        spec, res = solved
        b = spec.beamformers(res.x, s)
        assert violation(s, w, b) <= 1e-6
        assert sum(user_rate(s, w, b, k) for k in range(s.n_sus)) >= spec.objective_value(res.x) - 1e-9

    def test_nesting_on_random_feasible_points(self, setting, solved):
        s, w, _, pt = setting
        spec, res = solved
        x_n = lift(spec, s, pt, pt.beams)
        # the subproblem feasible set is convex: chords between two feasible points stay inside
        for theta in np.linspace(0.0, 1.0, 11):
            x = (1 - theta) * x_n + theta * res.x
            assert spec.max_violation(x) <= 1e-7
            assert violation(s, w, spec.beamformers(x, s)) <= 1e-6
