"""Physical instance: geometry, path loss, Rician fading, CSI uncertainty radii.

Units: powers in mW, times in seconds, distances in metres, rates in nats.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .probmath import db_to_linear, dbm_to_mw
from .sensing import SensingConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario parameters."""


@dataclass(frozen=True)
class ScenarioParams:
    """Generation parameters; defaults follow the reference simulation setup."""

    n_sus: int = 6
    n_pus: int = 3
    n_tx: int = 8
    cell_radius: float = 100.0
    min_distance: float = 10.0
    path_loss_exp: float = 3.0
    # distance at which the large-scale gain is 0 dB
    ref_distance: float = 10.0
    rician_k_db: float = 10.0
    los_only: bool = False
    noise_dbm: float = -90.0
    p_sbs_dbm: float = 20.0
    i_cap_dbm: float = -5.0
    i_bar_p_dbm: float = 5.0
    min_rate_bps: float = 0.5
    eps_s: float = 1e-3
    eps_p: float = 1e-2
    slot: float = 0.1
    t_p: float = 5e-3
    t_r: float = 0.2e-3
    t_fc: float = 1e-3
    gamma_db: float = -15.0
    f_s: float = 1.5e6
    target_p_d: float = 0.9
    target_p_f: float = 0.1

    def validate(self) -> None:
        if self.n_sus < 1 or self.n_tx < 1 or self.n_pus < 0:
            raise ConfigError("need n_sus >= 1, n_tx >= 1, n_pus >= 0")
        if not self.cell_radius > self.min_distance > 0:
            raise ConfigError(
                f"cell radius {self.cell_radius} must exceed min distance {self.min_distance} > 0"
            )
        if self.eps_s < 0 or self.eps_p < 0 or self.eps_s >= 1:
            raise ConfigError("uncertainty levels must satisfy 0 <= eps_s < 1, eps_p >= 0")
        if self.t_pr >= self.slot:
            raise ConfigError("prediction/reporting overhead exceeds the slot length")

    @property
    def t_pr(self) -> float:
        return self.t_p + self.n_sus * self.t_r + self.t_fc

    def replace(self, **changes) -> "ScenarioParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Scenario:
    """Estimated channels and every scalar the rate and constraint models need.

    ``h`` is (K, N_t), ``g`` is (M, N_t); rows are the estimated channels of
    the SUs and PUs.  ``min_rate`` is in nats/s/Hz.
    """

    h: np.ndarray
    delta: np.ndarray
    noise_var: np.ndarray
    min_rate: np.ndarray
    g: np.ndarray
    delta_pu: np.ndarray
    i_cap: np.ndarray
    p_sbs: float
    i_bar_p: float
    slot: float
    t_pr: float
    sensing: SensingConfig = field(default_factory=SensingConfig)
    su_xy: Optional[np.ndarray] = None
    pu_xy: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("h", "g"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.ndim != 2:
                raise ConfigError(f"{name} must be 2-D")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("delta", "noise_var", "min_rate", "delta_pu", "i_cap"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.g.shape[0] and self.g.shape[1] != self.h.shape[1]:
            raise ConfigError("SU and PU channels must have the same antenna count")
        if np.any(self.delta < 0) or np.any(self.delta_pu < 0):
            raise ConfigError("uncertainty radii must be non-negative")
        if not self.t_pr < self.slot:
            raise ConfigError("t_pr must be shorter than the slot")
        if self.p_sbs <= 0:
            raise ConfigError("power cap must be positive")

    @property
    def n_tx(self) -> int:
        return self.h.shape[1]

    @property
    def n_sus(self) -> int:
        return self.h.shape[0]

    @property
    def n_pus(self) -> int:
        return self.g.shape[0]

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_uncertainty(self, eps_s: float, eps_p: float) -> "Scenario":
        """Radii recomputed from normalized uncertainty levels."""
        return self.replace(
            delta=eps_s * np.sum(np.abs(self.h) ** 2, axis=1),
            delta_pu=eps_p * np.sum(np.abs(self.g) ** 2, axis=1),
        )

    def to_dict(self) -> dict:
        def cvec(rows):
            return [interleave(r) for r in rows]

        d = {
            "schema": "psbss-scenario",
            "version": SCHEMA_VERSION,
            "n_tx": self.n_tx,
            "sus": [
                {
                    "h": interleave(self.h[k]),
                    "delta": float(self.delta[k]),
                    "noise_var": float(self.noise_var[k]),
                    "min_rate": float(self.min_rate[k]),
                }
                for k in range(self.n_sus)
            ],
            "pus": [
                {
                    "g": interleave(self.g[m]),
                    "delta": float(self.delta_pu[m]),
                    "i_cap": float(self.i_cap[m]),
                }
                for m in range(self.n_pus)
            ],
            "p_sbs": float(self.p_sbs),
            "i_bar_p": float(self.i_bar_p),
            "timing": {"slot": float(self.slot), "t_pr": float(self.t_pr)},
            "sensing": {
                "gamma": self.sensing.gamma,
                "f_s": self.sensing.f_s,
                "target_p_d": self.sensing.target_p_d,
                "target_p_f": self.sensing.target_p_f,
            },
        }
        if self.su_xy is not None:
            d["su_xy"] = np.asarray(self.su_xy, dtype=float).tolist()
        if self.pu_xy is not None:
            d["pu_xy"] = np.asarray(self.pu_xy, dtype=float).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if d.get("schema") != "psbss-scenario":
            raise ConfigError("not a scenario document")
        if d.get("version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported scenario schema version {d.get('version')}")
        n_tx = int(d["n_tx"])
        sus, pus = d["sus"], d["pus"]
        g = (
            np.array([deinterleave(p["g"]) for p in pus])
            if pus
            else np.zeros((0, n_tx), dtype=complex)
        )
        return cls(
            h=np.array([deinterleave(s["h"]) for s in sus]),
            delta=[s["delta"] for s in sus],
            noise_var=[s["noise_var"] for s in sus],
            min_rate=[s["min_rate"] for s in sus],
            g=g,
            delta_pu=[p["delta"] for p in pus],
            i_cap=[p["i_cap"] for p in pus],
            p_sbs=d["p_sbs"],
            i_bar_p=d["i_bar_p"],
            slot=d["timing"]["slot"],
            t_pr=d["timing"]["t_pr"],
            sensing=SensingConfig(**d["sensing"]),
            su_xy=np.array(d["su_xy"]) if "su_xy" in d else None,
            pu_xy=np.array(d["pu_xy"]) if "pu_xy" in d else None,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        """Content hash used to assert that paired runs share one instance."""
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def interleave(v) -> list:
    v = np.asarray(v, dtype=complex)
    out = np.empty(2 * v.size)
    out[0::2], out[1::2] = v.real, v.imag
    return out.tolist()


def deinterleave(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size % 2:
        raise ConfigError("interleaved complex vector has odd length")
    return x[0::2] + 1j * x[1::2]


def entity_rng(seed: int, trial: int, entity: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, trial, entity)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(trial), int(entity)))
    return np.random.Generator(np.random.Philox(ss))


def large_scale_gain(distance, params: ScenarioParams):
    return (np.asarray(distance, dtype=float) / params.ref_distance) ** (-params.path_loss_exp)


def steering_vector(n_tx: int, azimuth: float) -> np.ndarray:
    """Half-wavelength ULA response, unit modulus per entry."""
    return np.exp(1j * math.pi * np.arange(n_tx) * math.sin(azimuth))


def rician_channel(rng: np.random.Generator, xy, params: ScenarioParams) -> np.ndarray:
    x, y = float(xy[0]), float(xy[1])
    d = math.hypot(x, y)
    los = steering_vector(params.n_tx, math.atan2(y, x))
    if params.los_only:
        small = los
    else:
        kr = db_to_linear(params.rician_k_db)
        nlos = (rng.standard_normal(params.n_tx) + 1j * rng.standard_normal(params.n_tx)) / math.sqrt(2)
        small = math.sqrt(kr / (kr + 1.0)) * los + math.sqrt(1.0 / (kr + 1.0)) * nlos
    return math.sqrt(float(large_scale_gain(d, params))) * small


def _random_position(rng: np.random.Generator, params: ScenarioParams) -> np.ndarray:
    # uniform over the annulus [min_distance, cell_radius]
    r2 = rng.uniform(params.min_distance**2, params.cell_radius**2)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return math.sqrt(r2) * np.array([math.cos(theta), math.sin(theta)])


def generate(
    seed: int,
    params: ScenarioParams = ScenarioParams(),
    trial: int = 0,
    su_xy: Optional[Sequence] = None,
    pu_xy: Optional[Sequence] = None,
) -> Scenario:
    """Draw one instance.  Positions are random unless supplied."""
    params.validate()
    K, M = params.n_sus, params.n_pus
    rngs = [entity_rng(seed, trial, e) for e in range(K + M)]
    if su_xy is None:
        su_xy = [_random_position(rngs[k], params) for k in range(K)]
    if pu_xy is None:
        pu_xy = [_random_position(rngs[K + m], params) for m in range(M)]
    su_xy = np.asarray(su_xy, dtype=float).reshape(K, 2)
    pu_xy = np.asarray(pu_xy, dtype=float).reshape(M, 2)
    for xy in np.vstack([su_xy, pu_xy]):
        d = math.hypot(*xy)
        if d < params.min_distance - 1e-9 or d > params.cell_radius + 1e-9:
            raise ConfigError(f"user at distance {d:.2f} m lies outside the allowed annulus")
    h = np.array([rician_channel(rngs[k], su_xy[k], params) for k in range(K)])
    g = (
        np.array([rician_channel(rngs[K + m], pu_xy[m], params) for m in range(M)])
        if M
        else np.zeros((0, params.n_tx), dtype=complex)
    )
    return Scenario(
        h=h,
        delta=params.eps_s * np.sum(np.abs(h) ** 2, axis=1),
        noise_var=np.full(K, dbm_to_mw(params.noise_dbm)),
        min_rate=np.full(K, params.min_rate_bps * math.log(2.0)),
        g=g,
        delta_pu=params.eps_p * np.sum(np.abs(g) ** 2, axis=1),
        i_cap=np.full(M, dbm_to_mw(params.i_cap_dbm)),
        p_sbs=dbm_to_mw(params.p_sbs_dbm),
        i_bar_p=dbm_to_mw(params.i_bar_p_dbm),
        slot=params.slot,
        t_pr=params.t_pr,
        sensing=SensingConfig(
            gamma=db_to_linear(params.gamma_db), f_s=params.f_s,
            target_p_d=params.target_p_d, target_p_f=params.target_p_f,
        ),
        su_xy=su_xy,
        pu_xy=pu_xy,
    )


# Reference layout (version 1): SUs alternate between two rings, PUs sit on an
# outer ring rotated half a sector from the SUs.
LAYOUT_VERSION = 1
SU_RINGS = (20.0, 40.0)
PU_RING = 80.0


def reference_positions(n_sus: int = 6, n_pus: int = 3) -> tuple[np.ndarray, np.ndarray]:
    su = []
    for k in range(n_sus):
        theta = 2.0 * math.pi * k / n_sus
        r = SU_RINGS[k % len(SU_RINGS)]
        su.append((r * math.cos(theta), r * math.sin(theta)))
    pu = []
    for m in range(n_pus):
        theta = 2.0 * math.pi * (m + 0.5) / max(n_pus, 1)
        pu.append((PU_RING * math.cos(theta), PU_RING * math.sin(theta)))
    return np.array(su).reshape(n_sus, 2), np.array(pu).reshape(n_pus, 2)


def fixed_layout(
    seed: int = 0, trial: int = 0, params: ScenarioParams = ScenarioParams()
) -> Scenario:
    """Reference geometry with fading drawn for (seed, trial)."""
    su_xy, pu_xy = reference_positions(params.n_sus, params.n_pus)
    return generate(seed, params, trial=trial, su_xy=su_xy, pu_xy=pu_xy)
