"""Worst-case robust rates and the constraint functions of the sum-rate problem.

Case labels follow ``sensing``: first digit true PU state, second digit the
decision.  Cases ``00``/``10`` are served by the idle-decision beamformers
``w0``; cases ``01``/``11`` by the busy-decision beamformers ``w1``.  Cases
with a busy PU (``1x``) see the mean primary interference ``i_bar_p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .scenario import Scenario
from .sensing import CaseProbabilities

CASES = ("00", "01", "10", "11")


def beam_index(case: str) -> int:
    """Which beamformer set (0 or 1) serves a case."""
    return int(case[1])


def pu_busy(case: str) -> bool:
    return case[0] == "1"


class InfeasiblePointError(ValueError):
    """Worst-case useful signal power is not positive at the evaluated point."""

    def __init__(self, k: int, case: str, numerator: float):
        super().__init__(
            f"user {k} case {case}: worst-case signal power {numerator:.3e} <= 0"
        )
        self.k, self.case, self.numerator = k, case, numerator


@dataclass(frozen=True)
class BeamformerSet:
    """Idle- and busy-decision beamformers, rows per user, plus sensing time.

    ``t_s`` is ``None`` for models without a sensing phase (underlay).
    """

    w0: np.ndarray
    w1: np.ndarray
    t_s: Optional[float] = None

    def __post_init__(self):
        for name in ("w0", "w1"):
            arr = np.array(getattr(self, name), dtype=complex)
            if arr.ndim != 2:
                raise ValueError(f"{name} must be (K, N_t)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.w0.shape != self.w1.shape:
            raise ValueError("w0 and w1 must have equal shapes")

    def beams(self, i: int) -> np.ndarray:
        return self.w1 if i else self.w0

    @classmethod
    def zeros(cls, n_sus: int, n_tx: int, t_s: Optional[float] = None) -> "BeamformerSet":
        z = np.zeros((n_sus, n_tx), dtype=complex)
        return cls(z, z, t_s)

    def tau(self, s: Scenario) -> float:
        """``T / (T - t_pr - t_s)``; 1 when there is no sensing phase."""
        if self.t_s is None:
            return 1.0
        return s.slot / (s.slot - s.t_pr - self.t_s)

    def scaled(self, c: float) -> "BeamformerSet":
        return BeamformerSet(c * self.w0, c * self.w1, self.t_s)


def t_s_from_tau(s: Scenario, tau: float) -> float:
    return s.slot - s.t_pr - s.slot / tau


@dataclass(frozen=True)
class ModelWeights:
    """How a spectrum-access model combines the case rates and constraints.

    ``cases`` maps case label to its composite probability (absent cases do
    not contribute).  ``power``/``interference`` weight the (w0, w1) terms of
    the average-power and PU-interference constraints.  ``time_split``
    toggles the sensing phase and its ``1/tau`` transmission fraction.
    """

    name: str
    cases: dict = field(default_factory=dict)
    power: tuple = (1.0, 1.0)
    interference: tuple = (0.0, 1.0)
    time_split: bool = True
    use_interference: bool = True

    @property
    def beam_sets(self) -> tuple:
        return tuple(sorted({beam_index(c) for c, wt in self.cases.items()}))


def psbss_weights(probs: CaseProbabilities) -> ModelWeights:
    return ModelWeights(
        name="psbss",
        cases={"00": probs.pt00, "01": probs.pt01, "10": probs.pt10, "11": probs.pt11},
        power=(probs.phat0, probs.phat1),
        interference=(probs.p10, 1.0 - probs.p10),
    )


def opportunistic_weights(probs: CaseProbabilities) -> ModelWeights:
    return ModelWeights(
        name="opportunistic",
        cases={"00": probs.pt00, "10": probs.pt10},
        power=(probs.phat0, 0.0),
        interference=(0.0, 0.0),
        use_interference=False,
    )


def underlay_weights() -> ModelWeights:
    return ModelWeights(
        name="underlay",
        cases={"11": 1.0},
        power=(0.0, 1.0),
        interference=(0.0, 1.0),
        time_split=False,
    )


def _as_weights(probs) -> ModelWeights:
    if isinstance(probs, ModelWeights):
        return probs
    if hasattr(probs, "cases") and isinstance(probs.cases, CaseProbabilities):
        probs = probs.cases
    return psbss_weights(probs)


def chi_terms(s: Scenario, b: BeamformerSet, k: int) -> dict:
    """Worst-case interference-plus-noise of user ``k`` for every case."""
    out = {}
    for i in (0, 1):
        w = b.beams(i)
        others = np.delete(np.arange(s.n_sus), k)
        leak = float(np.sum(np.abs(w[others] @ s.h[k].conj()) ** 2))
        spread = float(s.delta[k] * np.sum(np.abs(w[others]) ** 2))
        base = leak + spread + float(s.noise_var[k])
        out["0" + str(i)] = base
        out["1" + str(i)] = base + s.i_bar_p
    return out


def signal_terms(s: Scenario, b: BeamformerSet, k: int) -> tuple:
    """Worst-case useful power ``|h^H w|^2 - delta ||w||^2`` for (w0, w1)."""
    out = []
    for i in (0, 1):
        w = b.beams(i)[k]
        out.append(abs(np.vdot(s.h[k], w)) ** 2 - s.delta[k] * float(np.vdot(w, w).real))
    return tuple(out)


def worst_case_rate(s: Scenario, b: BeamformerSet, k: int, case: str) -> float:
    num = signal_terms(s, b, k)[beam_index(case)]
    if not num > 0.0:
        raise InfeasiblePointError(k, case, num)
    return math.log1p(num / chi_terms(s, b, k)[case])


def perfect_csi_rate(h: np.ndarray, w: np.ndarray, k: int, noise: float, extra: float = 0.0) -> float:
    """Plain SINR rate with known channels (no uncertainty penalty)."""
    g = np.abs(w @ h[k].conj()) ** 2
    interf = float(np.sum(g) - g[k])
    return math.log1p(float(g[k]) / (interf + noise + extra))


def prefactor(s: Scenario, b: BeamformerSet, weights: ModelWeights) -> float:
    return 1.0 / b.tau(s) if weights.time_split else 1.0


def user_rate(s: Scenario, weights, b: BeamformerSet, k: int) -> float:
    """Effective rate of user ``k`` under a model's case weights (nats/s/Hz)."""
    weights = _as_weights(weights)
    pre = prefactor(s, b, weights)
    if pre <= 0.0:
        return 0.0
    total = 0.0
    for case, wt in weights.cases.items():
        if wt == 0.0:
            continue
        total += wt * worst_case_rate(s, b, k, case)
    return pre * total


def effective_rate(s: Scenario, probs, b: BeamformerSet, k: int) -> float:
    return user_rate(s, probs, b, k)


def sum_rate(s: Scenario, weights, b: BeamformerSet) -> float:
    return sum(user_rate(s, weights, b, k) for k in range(s.n_sus))


@dataclass(frozen=True)
class RateBreakdown:
    rates: dict
    effective: np.ndarray
    sum_rate: float
    slacks: "ConstraintSlacks"


@dataclass(frozen=True)
class ConstraintSlacks:
    """``bound - value`` for each constraint; non-negative means satisfied."""

    power: float
    interference: np.ndarray
    sensing_time: float
    rate: np.ndarray

    def worst(self) -> float:
        parts = [self.power, self.sensing_time]
        parts += list(np.atleast_1d(self.interference))
        parts += list(np.atleast_1d(self.rate))
        return float(min(parts))

    def max_violation(self, scale: Optional[dict] = None) -> float:
        """Largest violation, each relative to its bound when ``scale`` given."""
        scale = scale or {}
        v = [max(0.0, -self.power / scale.get("power", 1.0))]
        v.append(max(0.0, -self.sensing_time / scale.get("sensing_time", 1.0)))
        i_scale = np.asarray(scale.get("interference", 1.0))
        v += list(np.maximum(0.0, -np.atleast_1d(self.interference) / i_scale))
        r_scale = np.asarray(scale.get("rate", 1.0))
        v += list(np.maximum(0.0, -np.atleast_1d(self.rate) / r_scale))
        return float(max(v))


def power_value(s: Scenario, weights: ModelWeights, b: BeamformerSet) -> float:
    p0, p1 = weights.power
    e0 = float(np.sum(np.abs(b.w0) ** 2))
    e1 = float(np.sum(np.abs(b.w1) ** 2))
    return prefactor(s, b, weights) * (p0 * e0 + p1 * e1)


def interference_values(s: Scenario, weights: ModelWeights, b: BeamformerSet) -> np.ndarray:
    if s.n_pus == 0 or not weights.use_interference:
        return np.zeros(s.n_pus)
    i0, i1 = weights.interference
    out = np.zeros(s.n_pus)
    for m in range(s.n_pus):
        g = s.g[m]
        tot = 0.0
        for wt, w in ((i0, b.w0), (i1, b.w1)):
            if wt == 0.0:
                continue
            tot += wt * float(
                np.sum(np.abs(w @ g.conj()) ** 2) + s.delta_pu[m] * np.sum(np.abs(w) ** 2)
            )
        out[m] = tot
    return prefactor(s, b, weights) * out


def constraint_slacks(
    s: Scenario, probs, b: BeamformerSet, t_s_min: float = 0.0
) -> ConstraintSlacks:
    """Slacks of the power, interference, sensing-time and min-rate constraints.

    A point whose worst-case signal power is not positive gets ``-inf`` rate
    slack for the affected user.
    """
    weights = _as_weights(probs)
    rate_slack = np.empty(s.n_sus)
    for k in range(s.n_sus):
        try:
            rate_slack[k] = user_rate(s, weights, b, k) - s.min_rate[k]
        except InfeasiblePointError:
            rate_slack[k] = -math.inf
    if weights.use_interference:
        interf = s.i_cap - interference_values(s, weights, b)
    else:
        interf = np.full(s.n_pus, math.inf)
    ts = (b.t_s - t_s_min) if (weights.time_split and b.t_s is not None) else 0.0
    return ConstraintSlacks(
        power=s.p_sbs - power_value(s, weights, b),
        interference=interf,
        sensing_time=ts,
        rate=rate_slack,
    )


def breakdown(s: Scenario, probs, b: BeamformerSet, t_s_min: float = 0.0) -> RateBreakdown:
    weights = _as_weights(probs)
    rates = {c: np.array([worst_case_rate(s, b, k, c) for k in range(s.n_sus)])
             for c in weights.cases}
    eff = np.array([user_rate(s, weights, b, k) for k in range(s.n_sus)])
    return RateBreakdown(rates, eff, float(eff.sum()), constraint_slacks(s, weights, b, t_s_min))
