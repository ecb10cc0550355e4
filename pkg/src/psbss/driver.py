"""Iterative minorize-maximize optimizer for beamformers and sensing time.

The loop repeatedly expands the concave minorant around the current point,
solves the resulting conic program and moves to its solution.  A max-min
variant of the same program is used first to reach a point meeting every
minimum-rate requirement.

Every candidate is re-evaluated with the exact rate and constraint
functions before it is accepted, so the returned trace reflects true
objective values and true constraint violations.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import conic
from .rates import (
    BeamformerSet,
    InfeasiblePointError,
    ModelWeights,
    _as_weights,
    constraint_slacks,
    interference_values,
    opportunistic_weights,
    power_value,
    sum_rate,
    underlay_weights,
    user_rate,
)
from .scenario import Scenario
from .sensing import CaseProbabilities, sensing_floor
from .surrogate import (
    MARGIN,
    ExpansionError,
    build_subproblem,
    expansion_point,
    lift,
)

LN2 = math.log(2.0)


class InfeasibleInstanceError(RuntimeError):
    """The minimum rates could not be met; carries the best margin reached."""

    def __init__(self, best_margin: float, trace: "IterationTrace"):
        super().__init__(f"minimum-rate requirements not met; best margin {best_margin:.4e} nats")
        self.best_margin = best_margin
        self.trace = trace


@dataclass(frozen=True)
class DriverConfig:
    eps_err: float = 1e-3
    max_iters: int = 100
    init_max_iters: int = 40
    margin: float = MARGIN
    solver_tol: float = 1e-8
    solver_max_iters: int = 100
    feas_tol: float = 1e-6
    mono_tol: float = 1e-7
    t_s_fixed: Optional[float] = None

    def __post_init__(self):
        if not self.eps_err > 0:
            raise ValueError("eps_err must be positive")
        if self.max_iters < 1 or self.init_max_iters < 0:
            raise ValueError("iteration limits must be positive")
        if not (self.margin >= 0 and self.solver_tol > 0 and self.feas_tol >= 0 and self.mono_tol >= 0):
            raise ValueError("margins and tolerances must be non-negative")


@dataclass
class IterationRecord:
    phase: str
    iteration: int
    objective: float
    surrogate: float
    violation: float
    status: str
    rel_change: float = math.nan
    margin: float = math.nan
    tightness: float = math.nan
    solver_iterations: int = 0
    accepted: bool = True


@dataclass
class IterationTrace:
    model: str
    records: list = field(default_factory=list)
    status: str = "running"

    CSV_HEADER = ("phase", "iteration", "objective_bits", "violation", "status")

    def add(self, rec: IterationRecord) -> None:
        self.records.append(rec)

    def phase(self, name: str, accepted_only: bool = True) -> list:
        return [r for r in self.records if r.phase == name and (r.accepted or not accepted_only)]

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.phase("main")])

    @property
    def iterations(self) -> int:
        """Solved main-loop subproblems (accepted or not)."""
        return sum(1 for r in self.records if r.phase == "main" and r.iteration > 0)

    @property
    def init_iterations(self) -> int:
        return sum(1 for r in self.records if r.phase == "init" and r.iteration > 0)

    @property
    def final_objective(self) -> float:
        objs = self.objectives
        return float(objs[-1]) if objs.size else math.nan

    @property
    def rejected(self) -> int:
        return sum(1 for r in self.records if not r.accepted)

    def to_csv(self, stream=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for r in self.records:
            status = r.status if r.accepted else f"rejected:{r.status}"
            w.writerow([r.phase, r.iteration, f"{r.objective / LN2:.10g}", f"{r.violation:.3e}", status])
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text


# --------------------------------------------------------------------------
# evaluation helpers


def _floor(s: Scenario, weights: ModelWeights) -> float:
    return sensing_floor(s.sensing) if weights.time_split else 0.0


def violation(s: Scenario, weights: ModelWeights, b: BeamformerSet, include_rate: bool = True) -> float:
    """Largest constraint violation, each relative to its bound (0 if feasible)."""
    sl = constraint_slacks(s, weights, b, _floor(s, weights))
    scale = {
        "power": s.p_sbs,
        "interference": s.i_cap if s.n_pus else 1.0,
        "sensing_time": max(_floor(s, weights), 1e-3),
        "rate": np.maximum(s.min_rate, 1.0),
    }
    if not include_rate:
        sl = replace(sl, rate=np.zeros_like(sl.rate))
    return sl.max_violation(scale)


def rate_margin(s: Scenario, weights: ModelWeights, b: BeamformerSet) -> float:
    try:
        rates = np.array([user_rate(s, weights, b, k) for k in range(s.n_sus)])
    except InfeasiblePointError:
        return -math.inf
    return float(np.min(rates - s.min_rate))


def objective(s: Scenario, weights: ModelWeights, b: BeamformerSet) -> float:
    try:
        return sum_rate(s, weights, b)
    except InfeasiblePointError:
        return -math.inf


def _t_s_for_tau(s: Scenario, tau: float) -> float:
    return s.slot - s.t_pr - s.slot / tau


def seed_point(s: Scenario, weights, cfg: DriverConfig = DriverConfig()) -> BeamformerSet:
    """Matched-filter beams with an equal power split, scaled to the caps.

    The sensing time sits at the detection floor (or the fixed value),
    nudged up so the strict ``tau`` bound holds with the configured margin.
    """
    weights = _as_weights(weights)
    K, N = s.n_sus, s.n_tx
    dirs = s.h / np.linalg.norm(s.h, axis=1, keepdims=True)
    if weights.time_split:
        if cfg.t_s_fixed is not None:
            t_s = cfg.t_s_fixed
        else:
            tau_min = s.slot / (s.slot - s.t_pr - sensing_floor(s.sensing))
            t_s = _t_s_for_tau(s, tau_min + 10.0 * cfg.margin)
    else:
        t_s = None
    used = weights.beam_sets
    zero = np.zeros((K, N))
    unit = BeamformerSet(dirs if 0 in used else zero, dirs if 1 in used else zero, t_s)
    # both constraints are homogeneous of degree 2 in the beams
    limits = [s.p_sbs / power_value(s, weights, unit)]
    if weights.use_interference and s.n_pus:
        load = interference_values(s, weights, unit)
        limits += [cap / v for cap, v in zip(s.i_cap, load) if v > 0]
    p = min(limits)
    return unit.scaled(math.sqrt(p))


def _blend(s: Scenario, a: BeamformerSet, b: BeamformerSet, theta: float) -> BeamformerSet:
    """Point ``theta`` of the way from ``a`` to ``b`` (``tau`` blended linearly)."""
    w0 = (1 - theta) * a.w0 + theta * b.w0
    w1 = (1 - theta) * a.w1 + theta * b.w1
    if a.t_s is None:
        return BeamformerSet(w0, w1, None)
    tau = (1 - theta) * a.tau(s) + theta * b.tau(s)
    return BeamformerSet(w0, w1, _t_s_for_tau(s, tau))


# --------------------------------------------------------------------------
# one subproblem step


@dataclass
class _Step:
    candidate: Optional[BeamformerSet]
    surrogate: float
    status: str
    solver_iterations: int
    tightness: float


def _solve_step(s, weights, b, mode, cfg) -> _Step:
    pt = expansion_point(s, b, weights)
    spec = build_subproblem(s, weights, pt, mode=mode, t_s_fixed=cfg.t_s_fixed, margin=cfg.margin)
    x_n = lift(spec, s, pt, pt.beams)
    tight = abs(spec.objective_value(x_n) - (objective(s, weights, pt.beams) if mode == "psbss"
                                             else rate_margin(s, weights, pt.beams)))
    res = conic.solve(conic.lower(spec), tol=cfg.solver_tol, max_iters=cfg.solver_max_iters)
    if res.status in (conic.INFEASIBLE, conic.UNBOUNDED) or not np.all(np.isfinite(res.x)):
        return _Step(None, math.nan, res.status, res.iterations, tight)
    cand = spec.beamformers(res.x, s)
    return _Step(cand, spec.objective_value(res.x), res.status, res.iterations, tight)


def _acceptable(s, weights, b, cfg, include_rate) -> bool:
    try:
        return violation(s, weights, b, include_rate) <= cfg.feas_tol
    except InfeasiblePointError:
        return False


# --------------------------------------------------------------------------
# public entry points


def initialize(
    s: Scenario,
    probs,
    cfg: DriverConfig = DriverConfig(),
    trace: Optional[IterationTrace] = None,
) -> BeamformerSet:
    """Reach a point meeting every minimum rate, starting from the seed.

    Raises ``InfeasibleInstanceError`` if the smallest rate margin is still
    negative after ``cfg.init_max_iters`` max-min steps (or stops improving).
    """
    weights = _as_weights(probs)
    trace = trace if trace is not None else IterationTrace(weights.name)
    b = seed_point(s, weights, cfg)
    margin = rate_margin(s, weights, b)
    trace.add(IterationRecord("init", 0, objective(s, weights, b), math.nan,
                              violation(s, weights, b, include_rate=False), "seed", margin=margin))
    best = margin
    stall = 0
    for it in range(1, cfg.init_max_iters + 1):
        if margin >= 0.0:
            break
        try:
            step = _solve_step(s, weights, b, "initialization", cfg)
        except ExpansionError as exc:
            trace.add(IterationRecord("init", it, math.nan, math.nan, math.nan, f"expansion:{exc}", accepted=False))
            break
        accepted = False
        cand, new_margin = None, math.nan
        if step.candidate is not None:
            for theta in (1.0, 0.5):
                cand = step.candidate if theta == 1.0 else _blend(s, b, step.candidate, 0.5)
                new_margin = rate_margin(s, weights, cand)
                if new_margin >= margin - cfg.mono_tol and _acceptable(s, weights, cand, cfg, False):
                    accepted = True
                    break
        rec = IterationRecord(
            "init", it,
            objective(s, weights, cand) if accepted else math.nan,
            step.surrogate,
            violation(s, weights, cand, include_rate=False) if accepted else math.nan,
            step.status,
            margin=new_margin if accepted else math.nan,
            tightness=step.tightness,
            solver_iterations=step.solver_iterations,
            accepted=accepted,
        )
        trace.add(rec)
        if not accepted:
            break
        gain = new_margin - margin
        b, margin = cand, new_margin
        if margin > best + 1e-9 * max(1.0, abs(best)):
            best, stall = margin, 0
        else:
            stall += 1
        if stall >= 3 or (gain <= 1e-9 * max(1.0, abs(margin)) and margin < 0):
            if margin < 0:
                break
    if margin < 0.0:
        trace.status = "infeasible"
        raise InfeasibleInstanceError(best, trace)
    return b


def _optimize(s: Scenario, weights: ModelWeights, cfg: DriverConfig):
    trace = IterationTrace(weights.name)
    b = initialize(s, weights, cfg, trace)
    obj = objective(s, weights, b)
    trace.add(IterationRecord("main", 0, obj, math.nan, violation(s, weights, b), "start",
                              margin=rate_margin(s, weights, b)))
    trace.status = "max_iters"
    for it in range(1, cfg.max_iters + 1):
        try:
            step = _solve_step(s, weights, b, "psbss", cfg)
        except ExpansionError as exc:
            trace.add(IterationRecord("main", it, math.nan, math.nan, math.nan, f"expansion:{exc}", accepted=False))
            trace.status = "expansion_failure"
            break
        accepted = False
        cand, new_obj = None, math.nan
        if step.candidate is not None:
            # full step first; on solver trouble or a failed check, one half step
            thetas = (1.0, 0.5)
            for theta in thetas:
                cand = step.candidate if theta == 1.0 else _blend(s, b, step.candidate, 0.5)
                new_obj = objective(s, weights, cand)
                if new_obj >= obj - cfg.mono_tol and _acceptable(s, weights, cand, cfg, True):
                    accepted = True
                    break
        rel = abs(new_obj - obj) / max(abs(obj), 1e-12) if accepted else math.nan
        trace.add(IterationRecord(
            "main", it,
            new_obj if accepted else (new_obj if np.isfinite(new_obj) else math.nan),
            step.surrogate,
            violation(s, weights, cand) if cand is not None and accepted else math.nan,
            step.status,
            rel_change=rel,
            margin=rate_margin(s, weights, cand) if accepted else math.nan,
            tightness=step.tightness,
            solver_iterations=step.solver_iterations,
            accepted=accepted,
        ))
        if not accepted:
            trace.status = f"stalled:{step.status}"
            break
        b, obj = cand, new_obj
        if rel <= cfg.eps_err:
            trace.status = "converged"
            break
    b = expansion_point(s, b, weights).beams  # return with aligned phases
    return b, trace


def run(s: Scenario, probs, cfg: DriverConfig = DriverConfig()):
    """Optimize the prediction-and-sensing model; returns ``(beams, trace)``."""
    weights = _as_weights(probs)
    if weights.name != "psbss" and not isinstance(probs, ModelWeights):
        raise ValueError("run expects probabilities or PSBSS weights")
    return _optimize(s, weights, cfg)


def run_baseline(s: Scenario, probs, cfg: DriverConfig = DriverConfig(), model: str = "underlay"):
    """Optimize one of the reference access models with the same machinery."""
    if model == "opportunistic":
        cases = probs.cases if isinstance(getattr(probs, "cases", None), CaseProbabilities) else probs
        weights = opportunistic_weights(cases)
    elif model == "underlay":
        weights = underlay_weights()
        if cfg.t_s_fixed is not None:
            cfg = replace(cfg, t_s_fixed=None)
    else:
        raise ValueError(f"unknown baseline {model!r}")
    return _optimize(s, weights, cfg)


def run_model(s: Scenario, probs, model: str, cfg: DriverConfig = DriverConfig()):
    if model == "psbss":
        return run(s, probs, cfg)
    return run_baseline(s, probs, cfg, model)
