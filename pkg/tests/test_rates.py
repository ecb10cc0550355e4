import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psbss.rates import (
    BeamformerSet,
    InfeasiblePointError,
    ModelWeights,
    chi_terms,
    constraint_slacks,
    effective_rate,
    perfect_csi_rate,
    psbss_weights,
    sum_rate,
    worst_case_rate,
)
from psbss.sensing import sensing_floor

from conftest import make_scenario


def beams(w0, w1=None, t_s=None):
    w0 = np.atleast_2d(np.asarray(w0, dtype=complex))
    w1 = w0 if w1 is None else np.atleast_2d(np.asarray(w1, dtype=complex))
    return BeamformerSet(w0, w1, t_s)


def mrt(s):
    return s.h / np.linalg.norm(s.h, axis=1, keepdims=True)


def scalar_effective_rate(s, cases, w0, w1, t_s, k):
    """Loop-by-loop evaluation written without numpy reductions."""
    def dot(a, b):
        return sum(x.conjugate() * y for x, y in zip(a, b))

    def energy(v):
        return sum(abs(x) ** 2 for x in v)

    total = 0.0
    for case, wt in cases.items():
        w = w0 if case[1] == "0" else w1
        noise = s.noise_var[k] + (s.i_bar_p if case[0] == "1" else 0.0)
        chi = noise
        for j in range(s.n_sus):
            if j != k:
                chi += abs(dot(s.h[k], w[j])) ** 2 + s.delta[k] * energy(w[j])
        num = abs(dot(s.h[k], w[k])) ** 2 - s.delta[k] * energy(w[k])
        total += wt * math.log(1.0 + num / chi)
    return (1.0 - (s.t_pr + t_s) / s.slot) * total


class TestChi:
    def test_single_user(self):
        s = make_scenario([[1.0]], noise=0.3, i_bar_p=0.2)
        chi = chi_terms(s, beams([[5.0]]), 0)
        assert chi["00"] == pytest.approx(0.3) and chi["01"] == pytest.approx(0.3)
        assert chi["10"] == pytest.approx(0.5) and chi["11"] == pytest.approx(0.5)

    def test_zero_beamformers(self):
        s = make_scenario(np.ones((3, 2)), delta=0.1, noise=0.7)
        chi = chi_terms(s, BeamformerSet.zeros(3, 2), 1)
        assert chi["00"] == pytest.approx(0.7)

    def test_two_users_hand_value(self):
        s = make_scenario([[1.0], [1.0]])
        assert chi_terms(s, beams([[1.0], [2.0]]), 0)["00"] == pytest.approx(5.0)

    def test_uncertainty_inflates_leakage(self):
        s = make_scenario([[1.0, 0.0], [0.0, 1.0]], delta=0.5)
        chi = chi_terms(s, beams([[1.0, 0.0], [0.0, 2.0]]), 0)
        # orthogonal leakage is zero, so only the 0.5 * 4 uncertainty term remains
        assert chi["00"] == pytest.approx(1.0 + 2.0)


class TestWorstCaseRate:
    def test_unit_snr(self):
        s = make_scenario([[1.0]])
        assert worst_case_rate(s, beams([[1.0]]), 0, "00") == pytest.approx(math.log(2.0), abs=1e-12)

    def test_primary_interference(self):
        s = make_scenario([[1.0]], i_bar_p=1.0)
        assert worst_case_rate(s, beams([[1.0]]), 0, "10") == pytest.approx(math.log(1.5), abs=1e-12)

    def test_busy_decision_uses_second_set(self):
        s = make_scenario([[1.0]])
        b = beams([[1.0]], [[math.sqrt(3.0)]])
        assert worst_case_rate(s, b, 0, "01") == pytest.approx(math.log(4.0))

    @pytest.mark.parametrize("delta", [1.0, 2.0])
    def test_non_positive_signal(self, delta):
        s = make_scenario([[1.0]], delta=delta)
        with pytest.raises(InfeasiblePointError) as err:
            worst_case_rate(s, beams([[1.0]]), 0, "00")
        assert err.value.case == "00"

    def test_perfect_csi_reduction(self, rng):
        for _ in range(50):
            K, N = rng.integers(1, 5), rng.integers(1, 6)
            h = rng.normal(size=(K, N)) + 1j * rng.normal(size=(K, N))
            w = rng.normal(size=(K, N)) + 1j * rng.normal(size=(K, N))
            s = make_scenario(h, noise=rng.uniform(0.1, 2.0), i_bar_p=0.4)
            b = beams(w)
            for k in range(K):
                assert worst_case_rate(s, b, k, "00") == pytest.approx(
                    perfect_csi_rate(h, w, k, s.noise_var[k]), rel=1e-12)
                assert worst_case_rate(s, b, k, "10") == pytest.approx(
                    perfect_csi_rate(h, w, k, s.noise_var[k], 0.4), rel=1e-12)


class TestEffectiveRate:
    def test_zero_transmission_fraction(self, profile):
        s = make_scenario([[1.0]], slot=0.1, t_pr=0.04)
        assert effective_rate(s, profile.cases, beams([[1.0]], t_s=0.06), 0) == pytest.approx(0.0, abs=1e-15)

    def test_single_case(self):
        s = make_scenario([[1.0]], slot=0.1, t_pr=0.01)
        w = ModelWeights("only00", cases={"00": 1.0})
        assert effective_rate(s, w, beams([[1.0]], t_s=0.04), 0) == pytest.approx(0.5 * math.log(2.0))

    def test_matches_scalar_evaluation(self, table3, profile):
        t_s = sensing_floor(table3.sensing) * 1.2
        w0 = mrt(table3)
        w1 = mrt(table3) * 0.3
        b = BeamformerSet(w0, w1, t_s)
        c = profile.cases
        cases = {"00": c.pt00, "01": c.pt01, "10": c.pt10, "11": c.pt11}
        for k in range(table3.n_sus):
            ref = scalar_effective_rate(table3, cases, w0.tolist(), w1.tolist(), t_s, k)
            assert effective_rate(table3, c, b, k) == pytest.approx(ref, rel=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 2 * math.pi), min_size=6, max_size=6),
           st.lists(st.floats(0, 2 * math.pi), min_size=6, max_size=6))
    def test_phase_rotation_invariance(self, theta0, theta1):
        from psbss.scenario import fixed_layout
        from psbss.prediction import TrafficModel
        from psbss.sensing import probability_profile
        s = fixed_layout()
        probs = probability_profile(TrafficModel.from_intensity(0.4), 6, 0.1, 0.9).cases
        w = mrt(s)
        b = BeamformerSet(w, 0.5 * w, 0.006)
        rot0 = np.exp(1j * np.array(theta0))[:, None]
        rot1 = np.exp(1j * np.array(theta1))[:, None]
        rotated = BeamformerSet(w * rot0, 0.5 * w * rot1, 0.006)
        assert sum_rate(s, probs, rotated) == pytest.approx(sum_rate(s, probs, b), rel=1e-12)


class TestConstraintSlacks:
    def test_zero_beamformers_at_floor(self, table3, profile):
        t_min = sensing_floor(table3.sensing)
        sl = constraint_slacks(table3, profile.cases, BeamformerSet.zeros(6, 8, t_min), t_min)
        assert sl.power == pytest.approx(table3.p_sbs)
        np.testing.assert_allclose(sl.interference, table3.i_cap)
        assert sl.sensing_time == 0.0
        assert np.all(sl.rate < 0)

    def test_power_slack_decreases_with_scale(self, table3, profile):
        b = BeamformerSet(mrt(table3), mrt(table3), 0.006)
        values = [constraint_slacks(table3, profile.cases, b.scaled(c)).power for c in (1.0, 1.5, 3.0)]
        assert values[0] > values[1] > values[2]

    def test_power_weights(self, profile):
        s = make_scenario([[1.0]], p_sbs=10.0, slot=0.1, t_pr=0.01)
        b = beams([[1.0]], [[2.0]], t_s=0.04)
        c = profile.cases
        expected = 10.0 - 0.5 * (c.phat0 * 1.0 + c.phat1 * 4.0)
        assert constraint_slacks(s, c, b).power == pytest.approx(expected)

    def test_interference_weights(self, profile):
        s = make_scenario([[1.0, 0.0]], g=[[1.0, 1.0]], delta_pu=0.5, i_cap=3.0, slot=0.1, t_pr=0.01)
        b = beams([[1.0, 0.0]], [[0.0, 2.0]], t_s=0.04)
        c = profile.cases
        load0 = 1.0 + 0.5 * 1.0
        load1 = 4.0 + 0.5 * 4.0
        expected = 3.0 - 0.5 * (c.p10 * load0 + (1 - c.p10) * load1)
        assert constraint_slacks(s, c, b).interference[0] == pytest.approx(expected)

    def test_infeasible_signal_marks_rate(self, profile):
        s = make_scenario([[1.0]], delta=2.0)
        sl = constraint_slacks(s, profile.cases, beams([[1.0]], t_s=0.02))
        assert sl.rate[0] == -math.inf
        assert sl.worst() == -math.inf

    def test_weights_from_profile(self, profile):
        w = psbss_weights(profile.cases)
        assert w.power == (profile.cases.phat0, profile.cases.phat1)
        assert w.beam_sets == (0, 1)
