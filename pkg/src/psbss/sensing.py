"""Energy-detector statistics and the four prediction-and-sensing cases.

Index convention for the case probabilities: the first digit is the true PU
state (0 idle, 1 busy), the second the final decision (0 idle, 1 busy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .prediction import FusionResult, LocalPredictor, TrafficModel, fuse_majority, overall_prediction
from .probmath import DomainError, q_function, q_inverse


class DegenerateConfigurationError(DomainError):
    """A case probability has a zero denominator."""


@dataclass(frozen=True)
class SensingConfig:
    """Energy detector operating point.

    ``gamma`` is the linear received SNR of the PU signal at the secondary BS,
    ``f_s`` the sampling rate in samples/s.  ``detection_threshold`` and
    ``bs_noise_var`` are only needed for the raw-threshold forms.
    """

    gamma: float = 10 ** (-15 / 10)
    f_s: float = 1.5e6
    target_p_d: float = 0.9
    target_p_f: float = 0.1
    detection_threshold: Optional[float] = None
    bs_noise_var: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if not self.f_s > 0:
            raise DomainError(f"f_s must be positive, got {self.f_s}")
        if not 0.0 < self.target_p_d < 1.0:
            raise DomainError(f"target_p_d must lie in (0, 1), got {self.target_p_d}")
        if not 0.0 < self.target_p_f < 1.0:
            raise DomainError(f"target_p_f must lie in (0, 1), got {self.target_p_f}")


@dataclass(frozen=True)
class CaseProbabilities:
    p00: float
    p01: float
    p10: float
    p11: float
    pt00: float
    pt01: float
    pt10: float
    pt11: float
    phat0: float
    phat1: float

    def composite(self, case: str) -> float:
        return getattr(self, "pt" + case)


def _check_ts(t_s: float) -> None:
    if not t_s > 0:
        raise DomainError(f"sensing time must be positive, got {t_s}")


def false_alarm_from_threshold(cfg: SensingConfig, t_s: float) -> float:
    """P_f of the energy detector for an explicit threshold."""
    _check_ts(t_s)
    if cfg.detection_threshold is None:
        raise DomainError("detection_threshold is not set")
    ratio = cfg.detection_threshold / cfg.bs_noise_var
    return q_function((ratio - 1.0) * math.sqrt(t_s * cfg.f_s))


def detection_from_threshold(cfg: SensingConfig, t_s: float) -> float:
    """P_d of the energy detector for an explicit threshold."""
    _check_ts(t_s)
    if cfg.detection_threshold is None:
        raise DomainError("detection_threshold is not set")
    ratio = cfg.detection_threshold / cfg.bs_noise_var
    g = cfg.gamma
    return q_function((ratio - g - 1.0) * math.sqrt(t_s * cfg.f_s / (2.0 * g + 1.0)))


def false_alarm_given_pd(cfg: SensingConfig, t_s: float) -> float:
    """False-alarm probability at the target detection probability."""
    _check_ts(t_s)
    g = cfg.gamma
    arg = math.sqrt(2.0 * g + 1.0) * q_inverse(cfg.target_p_d) + math.sqrt(t_s * cfg.f_s) * g
    return q_function(arg)


def min_sensing_time(cfg: SensingConfig, p_f: float, p_d: float) -> float:
    """Shortest sensing time meeting (p_f, p_d); seconds."""
    g = cfg.gamma
    gap = q_inverse(p_f) - q_inverse(p_d) * math.sqrt(2.0 * g + 1.0)
    return gap * gap / (g * g * cfg.f_s)


def sensing_floor(cfg: SensingConfig) -> float:
    """Shortest sensing time meeting the configured (P_f, P_d) targets."""
    return min_sensing_time(cfg, cfg.target_p_f, cfg.target_p_d)


def case_probabilities(
    traffic: TrafficModel, fusion: FusionResult, p_f: float, p_d: float
) -> CaseProbabilities:
    for name, v in (("p_f", p_f), ("p_d", p_d)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name} must lie in [0, 1], got {v}")
    h0, h1 = traffic.prior_idle, traffic.prior_busy
    den_idle = (1.0 - fusion.q_wrong) * h0 + (1.0 - fusion.q_success) * h1
    den_busy = fusion.q_wrong * h0 + fusion.q_success * h1
    if den_idle <= 0.0:
        raise DegenerateConfigurationError("predicted-idle probability is zero")
    if den_busy <= 0.0:
        raise DegenerateConfigurationError("predicted-busy probability is zero")
    p00 = (1.0 - fusion.q_wrong) * h0 * (1.0 - p_f) / den_idle
    p10 = (1.0 - fusion.q_success) * h1 * (1.0 - p_d) / den_busy
    p01 = 1.0 - p00
    p11 = 1.0 - p10
    pt00, pt01 = h0 * p00, h0 * p01
    pt10, pt11 = h1 * p10, h1 * p11
    return CaseProbabilities(
        p00=p00, p01=p01, p10=p10, p11=p11,
        pt00=pt00, pt01=pt01, pt10=pt10, pt11=pt11,
        phat0=pt00 + pt10, phat1=pt01 + pt11,
    )


def sensing_only_composites(traffic: TrafficModel, p_d: float) -> tuple[float, float]:
    """Miss-detection / detection composites when no prediction is used."""
    h1 = traffic.prior_busy
    return h1 * (1.0 - p_d), h1 * p_d


@dataclass(frozen=True)
class ProbabilityProfile:
    """Every prediction and sensing probability for one configuration."""

    traffic: TrafficModel
    p_wrong: float
    p_success: float
    voters: int
    fusion: FusionResult
    p_f: float
    p_d: float
    cases: CaseProbabilities


def probability_profile(
    traffic: TrafficModel,
    n_sus: int,
    p_f: float,
    p_d: float,
    p_wrong: float = 0.25,
    p_success: float = 0.7,
) -> ProbabilityProfile:
    """Full pipeline for K = ``n_sus`` SUs plus the BS voting at the fusion centre."""
    pred = LocalPredictor(p_wrong=p_wrong, p_success=p_success, voters=n_sus + 1)
    fusion = overall_prediction(traffic, fuse_majority(pred))
    return ProbabilityProfile(
        traffic=traffic, p_wrong=p_wrong, p_success=p_success, voters=pred.voters,
        fusion=fusion, p_f=p_f, p_d=p_d,
        cases=case_probabilities(traffic, fusion, p_f, p_d),
    )
