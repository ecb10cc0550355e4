"""Monte-Carlo sweeps, CSV emitters and the command-line interface.

Config files are INI text with three sections::

    [experiment]
    axis = traffic          ; traffic | p_sbs | i_cap | min_rate | i_bar_p | eps_s | eps_p | n_tx
    grid = 0.1, 0.4, 0.8
    trials = 100
    seed = 1
    models = psbss, underlay, opportunistic
    layout = fixed          ; fixed | random
    traffic = 0.4           ; busy prior when traffic is not the swept axis
    p_wrong = 0.25
    p_success = 0.7

    [scenario]
    ; any ScenarioParams field, e.g. p_sbs_dbm = 20

    [driver]
    ; any DriverConfig field, e.g. eps_err = 1e-3

Axis values use the same units as the matching scenario field (dBm for
powers, bits/s/Hz for the minimum rate).  Sum rates are converted from
nats to bits/s/Hz once, when rows are written.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .driver import DriverConfig, InfeasibleInstanceError, run_model
from .prediction import TrafficModel
from .probmath import DomainError
from .scenario import ConfigError, Scenario, ScenarioParams, fixed_layout, generate
from .sensing import ProbabilityProfile, probability_profile, sensing_only_composites

CSV_VERSION = 1
MODELS = ("psbss", "underlay", "opportunistic")
LN2 = math.log(2.0)
WORKERS_ENV = "PSBSS_WORKERS"

# swept axis -> ScenarioParams field (None: handled outside the scenario)
AXES = {
    "traffic": None,
    "p_sbs": "p_sbs_dbm",
    "i_cap": "i_cap_dbm",
    "min_rate": "min_rate_bps",
    "i_bar_p": "i_bar_p_dbm",
    "eps_s": "eps_s",
    "eps_p": "eps_p",
    "n_tx": "n_tx",
}

SUMMARY_HEADER = (
    "axis", "value", "model", "mean_sum_rate_bits", "std_error",
    "feasible_rate", "mean_iterations", "trials", "infeasible", "failed",
)
TRIAL_HEADER = (
    "axis", "value", "trial", "model", "status", "sum_rate_bits",
    "iterations", "init_iterations", "scenario_digest",
)
PROBE_HEADER = (
    "traffic", "n_sus", "q_wrong", "q_success", "pred_idle", "pred_busy",
    "p00", "p01", "p10", "p11", "pt00", "pt01", "pt10", "pt11",
    "phat0", "phat1", "sensing_only_pt10",
)


@dataclass(frozen=True)
class ExperimentConfig:
    axis: str = "traffic"
    grid: tuple = (0.4,)
    trials: int = 100
    seed: int = 1
    models: tuple = MODELS
    layout: str = "fixed"
    traffic: float = 0.4
    p_wrong: float = 0.25
    p_success: float = 0.7
    scenario: ScenarioParams = ScenarioParams()
    driver: DriverConfig = DriverConfig()
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; choose from {', '.join(AXES)}")
        if len(self.grid) == 0:
            raise ConfigError("grid must not be empty")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        bad = [m for m in self.models if m not in MODELS]
        if bad or not self.models:
            raise ConfigError(f"unknown models {bad}; choose from {', '.join(MODELS)}")
        if self.layout not in ("random", "fixed"):
            raise ConfigError("layout must be 'random' or 'fixed'")

    def params_at(self, value) -> ScenarioParams:
        name = AXES[self.axis]
        if name is None:
            return self.scenario
        if name == "n_tx":
            value = int(value)
        return self.scenario.replace(**{name: value})

    def traffic_at(self, value) -> float:
        return float(value) if self.axis == "traffic" else self.traffic

    def profile_at(self, value, n_sus: Optional[int] = None) -> ProbabilityProfile:
        p = self.params_at(value)
        return probability_profile(
            TrafficModel.from_intensity(self.traffic_at(value)),
            n_sus if n_sus is not None else p.n_sus,
            p.target_p_f, p.target_p_d, self.p_wrong, self.p_success,
        )


def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float) or like is None:
        return float(value)
    return value


def _fields_from(section, cls):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section.name}]")
        try:
            out[key] = _coerce(raw, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] {key}: {exc}") from None
    return out


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for name in cp.sections():
        if name not in ("experiment", "scenario", "driver"):
            raise ConfigError(f"unknown section [{name}]")
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    kw = {}
    try:
        for key, raw in exp.items():
            if key == "grid":
                kw["grid"] = tuple(float(v) for v in raw.replace(",", " ").split())
            elif key == "models":
                kw["models"] = tuple(v for v in raw.replace(",", " ").split())
            elif key in ("trials", "seed"):
                kw[key] = int(raw)
            elif key in ("traffic", "p_wrong", "p_success"):
                kw[key] = float(raw)
            elif key in ("axis", "layout"):
                kw[key] = raw.strip()
            else:
                raise ConfigError(f"unknown key {key!r} in [experiment]")
    except ValueError as exc:
        raise ConfigError(f"[experiment]: {exc}") from None
    if cp.has_section("scenario"):
        params = ScenarioParams(**_fields_from(cp["scenario"], ScenarioParams))
        params.validate()
        kw["scenario"] = params
    if cp.has_section("driver"):
        kw["driver"] = DriverConfig(**_fields_from(cp["driver"], DriverConfig))
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# --------------------------------------------------------------------------
# running


@dataclass(frozen=True)
class TrialOutcome:
    value: float
    trial: int
    model: str
    status: str
    sum_rate: float  # nats/s/Hz; 0 when infeasible or failed
    iterations: int
    init_iterations: int
    digest: str


@dataclass(frozen=True)
class PointSummary:
    value: float
    model: str
    mean_sum_rate: float  # nats
    std_error: float
    feasible_rate: float
    mean_iterations: float
    trials: int
    infeasible: int
    failed: int


@dataclass
class SweepResult:
    config: ExperimentConfig
    points: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)

    def point(self, value, model) -> PointSummary:
        for p in self.points:
            if p.model == model and math.isclose(p.value, float(value), rel_tol=0, abs_tol=1e-12):
                return p
        raise KeyError((value, model))

    def rates(self, value, model) -> np.ndarray:
        """Per-trial sum rates (nats), ordered by trial index."""
        rows = [o for o in self.outcomes if o.model == model and o.value == float(value)]
        return np.array([o.sum_rate for o in sorted(rows, key=lambda o: o.trial)])

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("# psbss-sweep", f"v{CSV_VERSION}"))
        w.writerow(SUMMARY_HEADER)
        for p in self.points:
            w.writerow([
                self.config.axis, _fmt(p.value), p.model,
                _fmt(p.mean_sum_rate / LN2), _fmt(p.std_error / LN2),
                _fmt(p.feasible_rate), _fmt(p.mean_iterations),
                p.trials, p.infeasible, p.failed,
            ])
        return buf.getvalue()

    def trials_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("# psbss-trials", f"v{CSV_VERSION}"))
        w.writerow(TRIAL_HEADER)
        for o in self.outcomes:
            w.writerow([
                self.config.axis, _fmt(o.value), o.trial, o.model, o.status,
                _fmt(o.sum_rate / LN2), o.iterations, o.init_iterations, o.digest,
            ])
        return buf.getvalue()

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"sweep_{self.config.axis}.csv", out / "trials.csv"]
        paths[0].write_text(self.summary_csv())
        paths[1].write_text(self.trials_csv())
        return paths


def _fmt(x) -> str:
    return f"{float(x):.10g}"


def scenario_for(cfg: ExperimentConfig, value, trial: int) -> Scenario:
    params = cfg.params_at(value)
    if cfg.layout == "fixed":
        return fixed_layout(cfg.seed, trial, params)
    return generate(cfg.seed, params, trial=trial)


def _run_trial(task) -> list:
    cfg, value, trial = task
    s = scenario_for(cfg, value, trial)
    probs = cfg.profile_at(value, s.n_sus)
    digest = s.digest()
    out = []
    for model in cfg.models:
        # every model must see the very same instance
        if s.digest() != digest:
            raise AssertionError("scenario changed between paired model runs")
        try:
            _, trace = run_model(s, probs, model, cfg.driver)
            ok = math.isfinite(trace.final_objective)
            out.append(TrialOutcome(
                float(value), trial, model, trace.status,
                trace.final_objective if ok else 0.0,
                trace.iterations, trace.init_iterations, digest[:16],
            ))
        except InfeasibleInstanceError as exc:
            out.append(TrialOutcome(
                float(value), trial, model, "infeasible", 0.0,
                0, exc.trace.init_iterations, digest[:16],
            ))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            out.append(TrialOutcome(
                float(value), trial, model, f"failed:{type(exc).__name__}", 0.0, 0, 0, digest[:16],
            ))
    return out


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _summarize(value, model, rows) -> PointSummary:
    rates = np.array([r.sum_rate for r in rows])
    n = len(rows)
    feasible = [r for r in rows if r.status not in ("infeasible",) and not r.status.startswith("failed")]
    se = float(np.std(rates, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return PointSummary(
        value=float(value), model=model,
        mean_sum_rate=float(np.mean(rates)), std_error=se,
        feasible_rate=len(feasible) / n,
        mean_iterations=float(np.mean([r.iterations for r in feasible])) if feasible else 0.0,
        trials=n,
        infeasible=sum(r.status == "infeasible" for r in rows),
        failed=sum(r.status.startswith("failed") for r in rows),
    )


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> SweepResult:
    """Run every (grid value, trial) pair for every model.

    Infeasible or failed trials contribute a zero sum rate and are counted
    in the summary.  If ``cfg.out_dir`` is set the CSVs are written there.
    """
    tasks = [(cfg, float(v), t) for v in cfg.grid for t in range(cfg.trials)]
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1:
        chunks = [_run_trial(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_trial, tasks))
    outcomes = sorted(
        (o for chunk in chunks for o in chunk),
        key=lambda o: (cfg.grid.index(o.value), o.trial, cfg.models.index(o.model)),
    )
    result = SweepResult(cfg, outcomes=outcomes)
    for v in cfg.grid:
        for model in cfg.models:
            rows = [o for o in outcomes if o.value == float(v) and o.model == model]
            assert len(rows) == cfg.trials, "every trial must be accounted for"
            result.points.append(_summarize(v, model, rows))
        digests = {o.digest for o in outcomes if o.value == float(v)}
        per_trial = {(o.trial, o.digest) for o in outcomes if o.value == float(v)}
        assert len(per_trial) == cfg.trials >= 1 and len(digests) <= cfg.trials
    if cfg.out_dir is not None:
        result.write(cfg.out_dir)
    return result


def probe_rows(cfg: ExperimentConfig, n_sus: Optional[int] = None) -> list:
    """Prediction and sensing probabilities along the traffic grid."""
    grid = cfg.grid if cfg.axis == "traffic" else (cfg.traffic,)
    rows = []
    for v in grid:
        prof = cfg.profile_at(v, n_sus)
        c, f = prof.cases, prof.fusion
        only10, _ = sensing_only_composites(prof.traffic, prof.p_d)
        rows.append((
            v, prof.voters - 1, f.q_wrong, f.q_success, f.pred_idle, f.pred_busy,
            c.p00, c.p01, c.p10, c.p11, c.pt00, c.pt01, c.pt10, c.pt11,
            c.phat0, c.phat1, only10,
        ))
    return rows


def validate_rows(cfg: ExperimentConfig, trials: int = 3) -> list:
    """Per-run invariant checks: (trial, model, check, passed, detail)."""
    out = []
    v = cfg.grid[0]
    for t in range(min(trials, cfg.trials)):
        s = scenario_for(cfg, v, t)
        probs = cfg.profile_at(v, s.n_sus)
        for model in cfg.models:
            try:
                _, tr = run_model(s, probs, model, cfg.driver)
            except InfeasibleInstanceError as exc:
                margins = [r.margin for r in exc.trace.records if r.accepted]
                ok = all(b >= a - cfg.driver.mono_tol for a, b in zip(margins, margins[1:]))
                out.append((t, model, "init_margin_monotone", ok, "instance infeasible"))
                continue
            objs = tr.objectives
            diffs = np.diff(objs)
            worst_drop = float(-diffs.min()) if diffs.size else 0.0
            out.append((t, model, "monotone", worst_drop <= cfg.driver.mono_tol, f"largest drop {max(worst_drop, 0):.2e}"))
            viol = max(r.violation for r in tr.phase("main"))
            out.append((t, model, "feasible", viol <= cfg.driver.feas_tol, f"max violation {viol:.2e}"))
            tight = [r.tightness for r in tr.phase("main", accepted_only=False) if math.isfinite(r.tightness)]
            worst = max(tight) if tight else 0.0
            out.append((t, model, "tight", worst <= 1e-8 * max(1.0, abs(tr.final_objective)), f"max gap {worst:.2e}"))
    return out


# --------------------------------------------------------------------------
# CLI


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="psbss", description="Spectrum-sharing beamforming experiments")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="INI experiment file")
        sp.add_argument("--mode", action="append", choices=MODELS,
                        help="restrict to a model (repeatable)")
        sp.add_argument("--seed", type=int, help="override the config seed")

    r = sub.add_parser("run", help="run a Monte-Carlo sweep and write CSVs")
    common(r)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--trials", type=int, help="override the trial count")

    pr = sub.add_parser("probe", help="print prediction and sensing probabilities")
    common(pr, need_config=False)
    pr.add_argument("--n-sus", type=int, help="number of SUs (voters are this plus one)")

    v = sub.add_parser("validate", help="check optimizer invariants on a few trials")
    common(v)
    v.add_argument("--trials", type=int, default=3)
    return p


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.mode:
        changes["models"] = tuple(m for m in MODELS if m in args.mode)
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "trials", None) is not None and args.cmd == "run":
        changes["trials"] = args.trials
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cli(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.config and not Path(args.config).is_file():
        print(f"psbss: error: config file not found: {args.config}", file=sys.stderr)
        return 2
    try:
        cfg = _load(args)
    except (ConfigError, DomainError, TypeError, ValueError) as exc:
        print(f"psbss: error: invalid config: {exc}", file=sys.stderr)
        return 2

    if args.cmd == "probe":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(PROBE_HEADER)
        for row in probe_rows(cfg, args.n_sus):
            w.writerow([row[0], row[1]] + [_fmt(x) for x in row[2:]])
        return 0

    if args.cmd == "run":
        try:
            result = run_experiment(dataclasses.replace(cfg, out_dir=args.out))
        except OSError as exc:
            print(f"psbss: error: cannot write output: {exc}", file=sys.stderr)
            return 1
        for p in result.points:
            print(f"{cfg.axis}={_fmt(p.value)} {p.model}: {p.mean_sum_rate / LN2:.4f} bits/s/Hz "
                  f"(se {p.std_error / LN2:.4f}, feasible {p.feasible_rate:.2f})")
        return 0

    rows = validate_rows(cfg, args.trials)
    for t, model, check, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'} trial={t} model={model} {check}: {detail}")
    return 0 if all(r[3] for r in rows) else 1


def main() -> None:
    sys.exit(cli())
