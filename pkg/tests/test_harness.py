import csv
from pathlib import Path

import numpy as np
import pytest

from psbss import harness
from psbss.harness import (
    ExperimentConfig,
    PROBE_HEADER,
    SUMMARY_HEADER,
    TRIAL_HEADER,
    cli,
    load_config,
    parse_config,
    probe_rows,
    run_experiment,
    scenario_for,
    validate_rows,
    worker_count,
)
from psbss.scenario import ConfigError

DATA = Path(__file__).parent / "data"
TINY = DATA / "tiny.ini"


def read_rows(text):
    lines = text.splitlines()
    return lines[0], list(csv.reader(lines[1:]))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    assert cli(["run", "--config", str(TINY), "--out", str(out)]) == 0
    return out


class TestConfigParsing:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.axis == "traffic" and cfg.trials == 100
        assert cfg.models == ("psbss", "underlay", "opportunistic")

    def test_full_file(self):
        cfg = load_config(TINY)
        assert cfg.grid == (0.3, 0.6)
        assert cfg.trials == 2 and cfg.seed == 4
        assert cfg.models == ("psbss", "underlay")

    def test_sections_and_inline_comments(self):
        cfg = parse_config("""
[experiment]
axis = p_sbs   ; transmit power sweep
grid = 10 20
[scenario]
n_tx = 4
eps_s = 0.002
[driver]
max_iters = 7
""")
        assert cfg.params_at(10.0).p_sbs_dbm == 10.0
        assert cfg.scenario.n_tx == 4 and cfg.scenario.eps_s == 0.002
        assert cfg.driver.max_iters == 7

    @pytest.mark.parametrize("text", [
        "[experiment]\naxis = colour\n",
        "[experiment]\ntrials = 0\n",
        "[experiment]\ngrid =\n",
        "[experiment]\nmodels = psbss, overlay\n",
        "[experiment]\ntrials = many\n",
        "[experiment]\nspeed = 3\n",
        "[plots]\nx = 1\n",
        "[scenario]\nwarp = 9\n",
        "[scenario]\nn_sus = 0\n",
        "not an ini file",
    ])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_axis_values_reach_the_scenario(self):
        cfg = parse_config("[experiment]\naxis = n_tx\ngrid = 2 4\n")
        assert scenario_for(cfg, 2.0, 0).n_tx == 2
        assert scenario_for(cfg, 4.0, 0).n_tx == 4

    def test_traffic_axis(self):
        cfg = parse_config("[experiment]\ngrid = 0.2\ntraffic = 0.7\n")
        assert cfg.profile_at(0.2).traffic.prior_busy == pytest.approx(0.2)
        cfg = parse_config("[experiment]\naxis = eps_s\ngrid = 0.01\ntraffic = 0.7\n")
        assert cfg.profile_at(0.01).traffic.prior_busy == pytest.approx(0.7)


class TestSweepOutput:
    def test_summary_matches_golden(self, tiny_run):
        head, rows = read_rows((tiny_run / "sweep_traffic.csv").read_text())
        ghead, grows = read_rows((DATA / "golden_sweep_traffic.csv").read_text())
        assert head == ghead == "# psbss-sweep,v1"
        assert rows[0] == grows[0] == list(SUMMARY_HEADER)
        assert len(rows) == len(grows)
        for got, want in zip(rows[1:], grows[1:]):
            assert got[:3] == want[:3]
            np.testing.assert_allclose([float(x) for x in got[3:]], [float(x) for x in want[3:]], rtol=1e-6, atol=1e-9)

    def test_trials_match_golden(self, tiny_run):
        head, rows = read_rows((tiny_run / "trials.csv").read_text())
        ghead, grows = read_rows((DATA / "golden_trials.csv").read_text())
        assert head == ghead == "# psbss-trials,v1"
        assert rows[0] == grows[0] == list(TRIAL_HEADER)
        for got, want in zip(rows[1:], grows[1:]):
            assert got[:5] == want[:5] and got[-1] == want[-1]
            assert float(got[5]) == pytest.approx(float(want[5]), rel=1e-6)

    def test_byte_identical_reruns(self, tiny_run, tmp_path):
        assert cli(["run", "--config", str(TINY), "--out", str(tmp_path)]) == 0
        for name in ("sweep_traffic.csv", "trials.csv"):
            assert (tmp_path / name).read_bytes() == (tiny_run / name).read_bytes()

    def test_models_share_each_instance(self, tiny_run):
        _, rows = read_rows((tiny_run / "trials.csv").read_text())
        by_key = {}
        for r in rows[1:]:
            by_key.setdefault((r[1], r[2]), set()).add(r[-1])
        assert all(len(d) == 1 for d in by_key.values())

    def test_every_trial_counted(self):
        cfg = ExperimentConfig(grid=(0.4,), trials=2, models=("underlay",),
                               scenario=ExperimentConfig().scenario.replace(min_rate_bps=20.0, p_sbs_dbm=-30.0))
        res = run_experiment(cfg, workers=1)
        pt = res.point(0.4, "underlay")
        assert pt.trials == 2 and pt.infeasible == 2
        assert pt.feasible_rate == 0.0 and pt.mean_sum_rate == 0.0

    def test_worker_pool_gives_same_result(self):
        cfg = ExperimentConfig(grid=(0.5,), trials=2, models=("underlay",), seed=9)
        serial = run_experiment(cfg, workers=1)
        pooled = run_experiment(cfg, workers=2)
        assert serial.summary_csv() == pooled.summary_csv()
        assert serial.trials_csv() == pooled.trials_csv()


class TestWorkers:
    def test_default(self, monkeypatch):
        monkeypatch.delenv(harness.WORKERS_ENV, raising=False)
        assert worker_count() == 1

    def test_from_environment(self, monkeypatch):
        monkeypatch.setenv(harness.WORKERS_ENV, "3")
        assert worker_count() == 3

    def test_bad_value(self, monkeypatch):
        monkeypatch.setenv(harness.WORKERS_ENV, "lots")
        with pytest.raises(ConfigError):
            worker_count()


class TestProbe:
    def test_missed_detections_stay_small(self):
        cfg = parse_config("[experiment]\ngrid = 0.1 0.2 0.3 0.4 0.5 0.6 0.7 0.8\n")
        rows = probe_rows(cfg, n_sus=24)
        assert len(rows) == 8
        assert all(r[PROBE_HEADER.index("pt10")] < 0.05 for r in rows)
        assert all(r[PROBE_HEADER.index("pt10")] <= r[-1] for r in rows)

    def test_cli_output(self, capsys):
        assert cli(["probe", "--n-sus", "24"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].split(",") == list(PROBE_HEADER)
        assert out[1].split(",")[1] == "24"


class TestValidate:
    def test_invariants_hold(self):
        cfg = parse_config("[experiment]\ngrid = 0.4\ntrials = 1\nmodels = underlay\n")
        rows = validate_rows(cfg, trials=1)
        assert {r[2] for r in rows} == {"monotone", "feasible", "tight"}
        assert all(r[3] for r in rows)

    def test_cli(self, capsys):
        assert cli(["validate", "--config", str(TINY), "--mode", "underlay", "--trials", "1"]) == 0
        assert all(line.startswith("PASS") for line in capsys.readouterr().out.splitlines())


class TestExitCodes:
    def test_missing_config(self, tmp_path, capsys):
        assert cli(["run", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 2
        assert "not found" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[experiment]\ntrials = 0\n")
        assert cli(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
        assert "invalid config" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [[], ["launch"], ["run", "--config", "x.ini"], ["probe", "--colour"],
                                      ["run", "--config", "x.ini", "--out", "o", "--mode", "overlay"]])
    def test_usage_errors(self, argv):
        with pytest.raises(SystemExit) as err:
            cli(argv)
        assert err.value.code == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        argv = ["run", "--config", str(TINY), "--out", str(blocker / "sub"), "--trials", "1", "--mode", "underlay"]
        assert cli(argv) == 1
