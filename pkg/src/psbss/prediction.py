"""Cooperative spectrum prediction with majority-rule fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .probmath import DomainError, binomial_tail


@dataclass(frozen=True)
class TrafficModel:
    """Primary-user traffic prior.

    Only the ratio ``mu / lam`` (the traffic intensity) matters: it is the
    prior probability that the PU channel is busy.
    """

    lam: float = 1.0
    mu: float = 0.4

    def __post_init__(self):
        if self.lam <= 0 or self.mu < 0 or self.mu > self.lam:
            raise DomainError(f"need 0 <= mu <= lam, lam > 0 (got mu={self.mu}, lam={self.lam})")

    @classmethod
    def from_intensity(cls, intensity: float) -> "TrafficModel":
        return cls(lam=1.0, mu=float(intensity))

    @property
    def prior_busy(self) -> float:
        return self.mu / self.lam

    @property
    def prior_idle(self) -> float:
        return 1.0 - self.mu / self.lam


@dataclass(frozen=True)
class LocalPredictor:
    """Per-node prediction accuracy, shared by all ``voters`` (K SUs + the BS)."""

    p_wrong: float = 0.25
    p_success: float = 0.7
    voters: int = 7

    def __post_init__(self):
        for name in ("p_wrong", "p_success"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v}")
        if self.voters < 1:
            raise DomainError(f"need at least one voter, got {self.voters}")


@dataclass(frozen=True)
class FusionResult:
    q_wrong: float
    q_success: float
    pred_idle: float
    pred_busy: float


def majority_threshold(voters: int) -> int:
    """Votes needed for a 'busy' decision: ceil(voters / 2); ties vote busy."""
    return math.ceil(voters / 2)


def fuse_majority(pred: LocalPredictor) -> tuple[float, float]:
    """Fusion-centre wrong/successful prediction probabilities under majority rule."""
    k = majority_threshold(pred.voters)
    q_wrong = binomial_tail(pred.voters, k, pred.p_wrong)
    q_success = binomial_tail(pred.voters, k, pred.p_success)
    return q_wrong, q_success


def overall_prediction(traffic: TrafficModel, fusion: tuple[float, float]) -> FusionResult:
    q_wrong, q_success = fusion
    h0, h1 = traffic.prior_idle, traffic.prior_busy
    pred_busy = q_wrong * h0 + q_success * h1
    return FusionResult(
        q_wrong=q_wrong,
        q_success=q_success,
        pred_idle=1.0 - pred_busy,
        pred_busy=pred_busy,
    )
