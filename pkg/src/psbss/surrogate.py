"""Concave minorants of the case rates and assembly of the convex subproblem.

Each case rate over the transmission fraction, ``ln(1 + 1/phi)/tau``, is
jointly convex in ``(phi, tau)``, so its tangent plane at the current point
is a global under-estimator::

    ln(1 + 1/phi)/tau >= a - b*phi - c*tau

``phi`` itself is bounded through two epigraph variables per user and beam:
``omega`` under the linearized useful power and ``theta`` over
``chi/omega``.  The resulting program has a linear objective and linear,
sum-of-squares and quadratic-over-linear constraints.

Decision vector scaling: beamformer entries are stored divided by
``sqrt(P_sbs)``, ``omega`` divided by its value at the expansion point and
``theta`` divided by the expansion ``phi``; ``tau`` is stored as is.  All
constraints are normalized so their coefficients are O(1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conic import (
    Linear,
    QuadOverLin,
    StructureError,
    SumSquares,
    constraint_from_dict,
    constraint_to_dict,
)
from .probmath import DomainError
from .rates import (
    BeamformerSet,
    ModelWeights,
    _as_weights,
    beam_index,
    chi_terms,
)
from .scenario import Scenario
from .sensing import sensing_floor

MARGIN = 1e-7
MODES = ("psbss", "initialization")


class ExpansionError(ValueError):
    """The expansion point lies outside the trust region of the minorant."""


@dataclass(frozen=True)
class SurrogateCoefficients:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


def _coefficients(phi, tau) -> SurrogateCoefficients:
    phi = np.asarray(phi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    L = np.log1p(1.0 / phi)
    a = 2.0 * L / tau + 1.0 / (tau * (1.0 + phi))
    b = 1.0 / (tau * phi * (1.0 + phi))
    c = L / tau**2
    return SurrogateCoefficients(a, b, c)


def coefficients(phi_n, tau_n) -> SurrogateCoefficients:
    """Tangent-plane coefficients of ``ln(1 + 1/phi)/tau`` at ``(phi_n, tau_n)``."""
    phi_n = np.asarray(phi_n, dtype=float)
    tau_n = np.asarray(tau_n, dtype=float)
    if not (np.all(np.isfinite(phi_n)) and np.all(phi_n > 0)):
        raise DomainError("phi must be finite and positive")
    if not (np.all(np.isfinite(tau_n)) and np.all(tau_n > 1.0)):
        raise DomainError("tau must exceed 1")
    out = _coefficients(phi_n, tau_n)
    if not (np.all(out.a > 0) and np.all(out.b > 0) and np.all(out.c > 0)):
        raise DomainError("coefficients underflowed to zero")
    return out


def lower_bound_value(coeffs: SurrogateCoefficients, phi, tau):
    return coeffs.a - coeffs.b * phi - coeffs.c * tau


def complexity_estimate(n_tx: int, k_users: int, m_pus: int) -> float:
    """Per-iteration interior-point cost estimate of the convex subproblem."""
    for v in (n_tx, k_users):
        if int(v) != v or v < 1:
            raise ValueError("n_tx and k_users must be positive integers")
    if int(m_pus) != m_pus or m_pus < 0:
        raise ValueError("m_pus must be a non-negative integer")
    n_var = (2 * n_tx + 6) * k_users + 1
    return float(n_var**2 * math.sqrt(11 * k_users + m_pus + 2) * (2 * n_tx * k_users + 17 * k_users + m_pus + 3))


# --------------------------------------------------------------------------
# expansion point


def _re_im(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v.real, v.imag])


def align_phases(s: Scenario, b: BeamformerSet) -> BeamformerSet:
    """Rotate each user's beams so ``h_k^H w_k`` is real and non-negative."""
    out = []
    for w in (b.w0, b.w1):
        w = np.array(w)
        for k in range(s.n_sus):
            proj = np.vdot(s.h[k], w[k])
            if abs(proj) > 0:
                w[k] *= np.conj(proj) / abs(proj)
        out.append(w)
    return BeamformerSet(out[0], out[1], b.t_s)


@dataclass(frozen=True)
class ExpansionPoint:
    """Current iterate plus everything the minorant needs from it.

    ``r[i]`` is ``Re(h_k^H w_{k,i})``, ``num[i]`` the useful power
    ``r^2 - delta ||w||^2``, ``chi[case]`` and ``phi[case]`` per-user arrays.
    Only the beam sets used by ``weights`` are validated.
    """

    beams: BeamformerSet
    tau: float
    weights: ModelWeights
    r: tuple
    num: tuple
    chi: dict
    phi: dict

    @property
    def w0(self) -> np.ndarray:
        return self.beams.w0

    @property
    def w1(self) -> np.ndarray:
        return self.beams.w1


def expansion_point(
    s: Scenario,
    b: BeamformerSet,
    weights,
    align: bool = True,
) -> ExpansionPoint:
    weights = _as_weights(weights)
    if align:
        b = align_phases(s, b)
    tau = b.tau(s) if weights.time_split else 1.0
    if weights.time_split and not tau > 1.0:
        raise ExpansionError(f"tau = {tau} must exceed 1")
    r, num = [], []
    for i in (0, 1):
        w = b.beams(i)
        ri = np.array([np.vdot(s.h[k], w[k]).real for k in range(s.n_sus)])
        ni = ri**2 - s.delta * np.sum(np.abs(w) ** 2, axis=1)
        if i in weights.beam_sets:
            if np.any(ri <= 0) or np.any(ni <= 0):
                bad = int(np.argmin(np.minimum(ri, ni)))
                raise ExpansionError(
                    f"beam set {i}, user {bad}: Re(h^H w) = {ri[bad]:.3e}, useful power {ni[bad]:.3e}"
                )
        r.append(ri)
        num.append(ni)
    chi = {c: np.zeros(s.n_sus) for c in weights.cases}
    for k in range(s.n_sus):
        terms = chi_terms(s, b, k)
        for c in weights.cases:
            chi[c][k] = terms[c]
    phi = {c: chi[c] / num[beam_index(c)] for c in weights.cases}
    return ExpansionPoint(b, float(tau), weights, tuple(r), tuple(num), chi, phi)


def true_objective_at(pt: ExpansionPoint) -> float:
    """Objective of the smooth problem evaluated through the cached ``phi``."""
    total = 0.0
    for c, wt in pt.weights.cases.items():
        total += wt * float(np.sum(np.log1p(1.0 / pt.phi[c])))
    return total / pt.tau


# --------------------------------------------------------------------------
# subproblem


@dataclass(frozen=True)
class SubproblemSpec:
    """Convex subproblem in a scaled real decision vector.

    ``blocks`` maps a variable group to ``(start, shape)``; ``scale`` maps
    stored values to physical ones (``physical = scale * stored``).
    """

    mode: str
    model: str
    n_vars: int
    blocks: dict
    scale: np.ndarray
    objective: np.ndarray
    objective_constant: float
    constraints: tuple
    n_tx: int
    n_sus: int
    n_pus: int
    sense: str = "maximize"
    meta: dict = field(default_factory=dict)

    # ---- bookkeeping
    def block(self, name: str, x: np.ndarray) -> np.ndarray:
        start, shape = self.blocks[name]
        size = int(np.prod(shape)) if shape else 1
        return x[start:start + size].reshape(shape)

    def has(self, name: str) -> bool:
        return name in self.blocks

    def count(self, tag: str) -> int:
        return sum(1 for c in self.constraints if c.tag == tag)

    @property
    def bound_tags(self) -> tuple:
        return ("omega_floor",)

    def constraint_counts(self) -> dict:
        """Linear and quadratic constraint counts (variable bounds excluded)."""
        lin = quad = 0
        for c in self.constraints:
            if c.tag in self.bound_tags:
                continue
            if isinstance(c, Linear):
                lin += 1
            else:
                quad += 1
        return {"linear": lin, "quadratic": quad}

    @property
    def decision_count(self) -> int:
        """Scalar decision count with each complex beamformer entry counted once."""
        n = self.n_vars
        for name in ("w0", "w1"):
            if name in self.blocks:
                n -= int(np.prod(self.blocks[name][1])) // 2
        return n

    # ---- evaluation
    def objective_value(self, x: np.ndarray) -> float:
        return float(self.objective @ x + self.objective_constant)

    def max_violation(self, x: np.ndarray) -> float:
        return max((c.violation(x) for c in self.constraints), default=0.0)

    def violations_by_tag(self, x: np.ndarray) -> dict:
        out = {}
        for c in self.constraints:
            out[c.tag] = max(out.get(c.tag, 0.0), c.violation(x))
        return out

    def decode(self, x: np.ndarray) -> dict:
        """Physical values of every variable group."""
        phys = x * self.scale
        out = {}
        for name in self.blocks:
            v = self.block(name, phys)
            if name in ("w0", "w1"):
                K, two_n = v.shape
                n = two_n // 2
                v = v[:, :n] + 1j * v[:, n:]
            out[name] = v
        return out

    def beamformers(self, x: np.ndarray, s: Scenario) -> BeamformerSet:
        vals = self.decode(x)
        z = np.zeros((self.n_sus, self.n_tx), dtype=complex)
        w0 = vals.get("w0", z)
        w1 = vals.get("w1", z)
        if "tau" in vals:
            tau = float(vals["tau"])
            t_s = s.slot - s.t_pr - s.slot / tau
        elif self.meta.get("time_split", True):
            t_s = float(self.meta["t_s_fixed"])
        else:
            t_s = None
        return BeamformerSet(w0, w1, t_s)

    # ---- text dump
    def to_dict(self) -> dict:
        return {
            "schema": "psbss-subproblem",
            "version": 1,
            "mode": self.mode,
            "model": self.model,
            "n_vars": self.n_vars,
            "blocks": {k: [v[0], list(v[1])] for k, v in self.blocks.items()},
            "scale": self.scale.tolist(),
            "objective": self.objective.tolist(),
            "objective_constant": self.objective_constant,
            "constraints": [constraint_to_dict(c) for c in self.constraints],
            "dims": [self.n_tx, self.n_sus, self.n_pus],
            "sense": self.sense,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubproblemSpec":
        if d.get("schema") != "psbss-subproblem":
            raise StructureError("not a subproblem document")
        n = int(d["n_vars"])
        n_tx, n_sus, n_pus = d["dims"]
        return cls(
            mode=d["mode"],
            model=d["model"],
            n_vars=n,
            blocks={k: (int(v[0]), tuple(v[1])) for k, v in d["blocks"].items()},
            scale=np.asarray(d["scale"], dtype=float),
            objective=np.asarray(d["objective"], dtype=float),
            objective_constant=float(d["objective_constant"]),
            constraints=tuple(constraint_from_dict(c, n) for c in d["constraints"]),
            n_tx=n_tx,
            n_sus=n_sus,
            n_pus=n_pus,
            sense=d["sense"],
            meta=d["meta"],
        )

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_text(cls, text: str) -> "SubproblemSpec":
        return cls.from_dict(json.loads(text))


class _Layout:
    def __init__(self):
        self.blocks = {}
        self.scale = []
        self.n = 0

    def add(self, name, shape, scale):
        size = int(np.prod(shape)) if shape else 1
        self.blocks[name] = (self.n, tuple(shape))
        self.scale.extend(np.broadcast_to(np.asarray(scale, dtype=float), shape).ravel())
        self.n += size

    def index(self, name, *idx) -> int:
        start, shape = self.blocks[name]
        if not shape:
            return start
        return start + int(np.ravel_multi_index(idx, shape))

    def w_slice(self, i, k) -> slice:
        start, (K, two_n) = self.blocks[f"w{i}"]
        return slice(start + k * two_n, start + (k + 1) * two_n)


def _unit(n, j, val=1.0):
    v = np.zeros(n)
    v[j] = val
    return v


def build_subproblem(
    s: Scenario,
    probs,
    pt: ExpansionPoint,
    mode: str = "psbss",
    t_s_fixed: Optional[float] = None,
    margin: float = MARGIN,
    t_s_floor: Optional[float] = None,
) -> SubproblemSpec:
    """Assemble the convex minorant program around ``pt``.

    ``probs`` may be a ``ModelWeights`` or probability object; it must agree
    with the weights ``pt`` was built with.  ``t_s_fixed`` pins the sensing
    time.  ``t_s_floor`` overrides the detection-driven lower bound on the
    sensing time (taken from ``s.sensing`` otherwise).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    weights = _as_weights(probs)
    if weights.cases.keys() != pt.weights.cases.keys():
        raise StructureError("expansion point was built for a different model")
    K, N, M = s.n_sus, s.n_tx, s.n_pus
    sw = math.sqrt(s.p_sbs)
    time_split = weights.time_split
    beams = weights.beam_sets
    if time_split and not pt.tau > 1.0:
        raise ExpansionError("tau must exceed 1")
    for i in beams:
        if np.any(pt.r[i] <= 0) or np.any(pt.num[i] <= 0):
            raise ExpansionError(f"expansion point violates the trust region of beam set {i}")

    lay = _Layout()
    for i in beams:
        lay.add(f"w{i}", (K, 2 * N), sw)
    tau_var = time_split and t_s_fixed is None
    if tau_var:
        lay.add("tau", (), 1.0)
    for i in beams:
        lay.add(f"omega{i}", (K,), pt.num[i])
    cases = [c for c in ("00", "01", "10", "11") if c in weights.cases]
    for c in cases:
        lay.add(f"theta{c}", (K,), pt.phi[c])
    if mode == "initialization":
        lay.add("t", (), 1.0)
    n = lay.n
    cons = []

    # tau handling: tau is a variable, or a constant folded into coefficients
    if time_split:
        if t_s_floor is None:
            t_s_floor = sensing_floor(s.sensing)
        tau_min = s.slot / (s.slot - s.t_pr - t_s_floor)
        if t_s_fixed is not None:
            if t_s_fixed < t_s_floor - 1e-15:
                raise ValueError("fixed sensing time is below the detection floor")
            tau_const = s.slot / (s.slot - s.t_pr - t_s_fixed)
        else:
            tau_const = None
            cons.append(Linear(_unit(n, lay.index("tau")), -tau_min - margin, "tau_floor"))
    else:
        tau_min = 1.0
        tau_const = 1.0

    def tau_terms(coef):
        """(vector, constant) for ``coef * tau``."""
        if tau_var:
            return _unit(n, lay.index("tau"), coef), 0.0
        return np.zeros(n), coef * tau_const

    # per-case coefficients (tau_n = expansion tau, 1 without time split)
    coef = {}
    for c in cases:
        if time_split:
            coef[c] = coefficients(pt.phi[c], pt.tau)
        else:
            coef[c] = _coefficients(pt.phi[c], 1.0)

    def user_rate_affine(k):
        """Surrogate effective rate of user k as (vector, constant)."""
        vec = np.zeros(n)
        const = 0.0
        for c in cases:
            wt = weights.cases[c]
            if wt == 0.0:
                continue
            a, b, cc = coef[c].a[k], coef[c].b[k], coef[c].c[k]
            vec[lay.index(f"theta{c}", k)] -= wt * b * pt.phi[c][k]
            tv, tc = tau_terms(wt * cc)
            vec -= tv
            const += wt * a - tc
        return vec, const

    obj = np.zeros(n)
    obj0 = 0.0
    rate_aff = [user_rate_affine(k) for k in range(K)]
    if mode == "psbss":
        for vec, const in rate_aff:
            obj += vec
            obj0 += const
    else:
        obj = _unit(n, lay.index("t"))

    for i in beams:
        for k in range(K):
            hk = s.h[k]
            re_row = np.zeros(n)
            re_row[lay.w_slice(i, k)] = sw * _re_im(hk)  # Re(h^H w) on the scaled block
            rn = pt.r[i][k]
            om = pt.num[i][k]
            # linear trust region: 2 Re(h^H w) - r_n > 0, divided by r_n
            cons.append(Linear(2.0 * re_row / rn, -1.0 - margin, "trust_lin"))
            # quadratic trust region and useful-power epigraph, divided by omega_n
            F = np.zeros((2 * N, n))
            F[:, lay.w_slice(i, k)] = math.sqrt(s.delta[k] / om) * sw * np.eye(2 * N)
            lin = 2.0 * rn * re_row / om
            cons.append(SumSquares(F, np.zeros(2 * N), lin, -rn * rn / om - margin, "trust_quad"))
            lin_w = lin - _unit(n, lay.index(f"omega{i}", k))
            cons.append(SumSquares(F, np.zeros(2 * N), lin_w, -rn * rn / om, "epi_num"))
            cons.append(Linear(_unit(n, lay.index(f"omega{i}", k)), -margin, "omega_floor"))

    # interference-plus-noise over omega: ||z||^2 <= omega * theta, divided by chi_n
    for c in cases:
        i = beam_index(c)
        extra = s.i_bar_p if c[0] == "1" else 0.0
        for k in range(K):
            others = [j for j in range(K) if j != k]
            rows = []
            for j in others:
                blk = lay.w_slice(i, j)
                hk = s.h[k]
                r1 = np.zeros(n)
                r1[blk] = sw * _re_im(hk)
                r2 = np.zeros(n)
                r2[blk] = sw * np.concatenate([-hk.imag, hk.real])  # Im(h^H w)
                rows += [r1, r2]
                D = np.zeros((2 * N, n))
                D[:, blk] = sw * math.sqrt(s.delta[k]) * np.eye(2 * N)
                rows += list(D)
            rows.append(np.zeros(n))
            F = np.array(rows).reshape(-1, n)
            f = np.zeros(F.shape[0])
            f[-1] = math.sqrt(s.noise_var[k] + extra)
            chin = pt.chi[c][k]
            F /= math.sqrt(chin)
            f /= math.sqrt(chin)
            # omega_n * phi_n = chi_n, so scaled variables multiply to 1 at the point
            cons.append(
                QuadOverLin(
                    F, f,
                    _unit(n, lay.index(f"omega{i}", k)), 0.0,
                    _unit(n, lay.index(f"theta{c}", k)), 0.0,
                    "epi_den",
                )
            )

    # average power: sum_i p_i ||w_i||^2 <= tau P_sbs, divided by P_sbs
    p_rows = []
    for i in beams:
        wt = weights.power[i]
        if wt == 0.0:
            continue
        for k in range(K):
            D = np.zeros((2 * N, n))
            D[:, lay.w_slice(i, k)] = math.sqrt(wt) * np.eye(2 * N)
            p_rows += list(D)
    if p_rows:
        tv, tc = tau_terms(1.0)
        cons.append(SumSquares(np.array(p_rows), np.zeros(len(p_rows)), tv, tc, "power"))

    # PU interference caps
    if weights.use_interference:
        for m in range(M):
            gm = s.g[m]
            scale = s.i_cap[m]
            rows = []
            for i in beams:
                wt = weights.interference[i]
                if wt == 0.0:
                    continue
                for k in range(K):
                    blk = lay.w_slice(i, k)
                    r1 = np.zeros(n)
                    r1[blk] = sw * _re_im(gm)
                    r2 = np.zeros(n)
                    r2[blk] = sw * np.concatenate([-gm.imag, gm.real])
                    rows += [math.sqrt(wt / scale) * r1, math.sqrt(wt / scale) * r2]
                    if s.delta_pu[m] > 0:
                        D = np.zeros((2 * N, n))
                        D[:, blk] = sw * math.sqrt(wt * s.delta_pu[m] / scale) * np.eye(2 * N)
                        rows += list(D)
            if rows:
                tv, tc = tau_terms(1.0)
                cons.append(SumSquares(np.array(rows), np.zeros(len(rows)), tv, tc, "interference"))

    # minimum rates (or the max-min epigraph during initialization)
    for k in range(K):
        vec, const = rate_aff[k]
        if mode == "psbss":
            cons.append(Linear(vec, const - s.min_rate[k], "min_rate"))
        else:
            cons.append(Linear(vec - _unit(n, lay.index("t")), const - s.min_rate[k], "maxmin_epi"))

    meta = {
        "time_split": time_split,
        "tau_min": tau_min,
        "tau_n": pt.tau,
        "margin": margin,
    }
    if t_s_fixed is not None:
        meta["t_s_fixed"] = float(t_s_fixed)
    return SubproblemSpec(
        mode=mode,
        model=weights.name,
        n_vars=n,
        blocks=dict(lay.blocks),
        scale=np.array(lay.scale, dtype=float),
        objective=obj,
        objective_constant=float(obj0),
        constraints=tuple(cons),
        n_tx=N,
        n_sus=K,
        n_pus=M,
        meta=meta,
    )


def lift(spec: SubproblemSpec, s: Scenario, pt: ExpansionPoint, b: BeamformerSet) -> np.ndarray:
    """Stored-variable vector for a physical point with tight epigraph variables.

    ``omega`` is set to the linearized useful power around ``pt`` and
    ``theta`` to ``chi/omega``; during initialization ``t`` takes the
    smallest rate margin.  The subproblem objective at the result is the
    minorant value at ``b``.
    """
    x = np.zeros(spec.n_vars)
    sw = math.sqrt(s.p_sbs)

    def put(name, values):
        start, shape = spec.blocks[name]
        size = int(np.prod(shape)) if shape else 1
        x[start:start + size] = np.ravel(values)

    omega = {}
    for i in (0, 1):
        if not spec.has(f"w{i}"):
            continue
        w = b.beams(i)
        put(f"w{i}", np.hstack([w.real, w.imag]) / sw)
        re = np.array([np.vdot(s.h[k], w[k]).real for k in range(s.n_sus)])
        rn = pt.r[i]
        omega[i] = 2.0 * rn * re - rn**2 - s.delta * np.sum(np.abs(w) ** 2, axis=1)
        put(f"omega{i}", omega[i] / pt.num[i])
    if spec.has("tau"):
        put("tau", b.tau(s))
    for c in pt.weights.cases:
        if not spec.has(f"theta{c}"):
            continue
        chi = np.array([chi_terms(s, b, k)[c] for k in range(s.n_sus)])
        put(f"theta{c}", chi / omega[beam_index(c)] / pt.phi[c])
    if spec.has("t"):
        margins = [con.value(x) for con in spec.constraints if con.tag == "maxmin_epi"]
        put("t", min(margins))
    return x


def surrogate_rates(s: Scenario, pt: ExpansionPoint, b: BeamformerSet) -> np.ndarray:
    """Per-user minorant of the effective rate evaluated at ``b``.

    Uses the linearized useful power, so the value is only meaningful inside
    the trust region (positive linearized power).
    """
    weights = pt.weights
    tau = b.tau(s) if weights.time_split else 1.0
    out = np.zeros(s.n_sus)
    for c, wt in weights.cases.items():
        i = beam_index(c)
        w = b.beams(i)
        re = np.array([np.vdot(s.h[k], w[k]).real for k in range(s.n_sus)])
        rn = pt.r[i]
        lin_num = 2.0 * rn * re - rn**2 - s.delta * np.sum(np.abs(w) ** 2, axis=1)
        chi = np.array([chi_terms(s, b, k)[c] for k in range(s.n_sus)])
        phi = chi / lin_num
        if weights.time_split:
            co = coefficients(pt.phi[c], pt.tau)
        else:
            co = _coefficients(pt.phi[c], 1.0)
        out += wt * lower_bound_value(co, phi, tau)
    return out
