import math

import numpy as np
import pytest

from psbss.prediction import TrafficModel
from psbss.scenario import Scenario, fixed_layout
from psbss.sensing import SensingConfig, probability_profile


def make_scenario(h, delta=0.0, noise=1.0, min_rate=0.0, g=None, delta_pu=0.0,
                  i_cap=1.0, p_sbs=1.0, i_bar_p=0.0, slot=0.1, t_pr=0.01, sensing=None):
    """Hand-sized instance; ``h`` and ``g`` are (users, antennas)."""
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    K, N = h.shape
    if g is None:
        g = np.zeros((0, N), dtype=complex)
    g = np.asarray(g, dtype=complex).reshape(-1, N)
    M = g.shape[0]
    return Scenario(
        h=h,
        delta=np.broadcast_to(delta, (K,)),
        noise_var=np.broadcast_to(noise, (K,)),
        min_rate=np.broadcast_to(min_rate, (K,)),
        g=g,
        delta_pu=np.broadcast_to(delta_pu, (M,)),
        i_cap=np.broadcast_to(i_cap, (M,)),
        p_sbs=p_sbs,
        i_bar_p=i_bar_p,
        slot=slot,
        t_pr=t_pr,
        sensing=sensing or SensingConfig(),
    )


@pytest.fixture(scope="session")
def profile():
    return probability_profile(TrafficModel.from_intensity(0.4), 6, 0.1, 0.9)


@pytest.fixture(scope="session")
def table3():
    return fixed_layout()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


LN2 = math.log(2.0)


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(number: int, passed: bool, detail: str) -> None:
        store[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
        print(store[number])

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_VERDICTS, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
