import json

import numpy as np
import pytest

from lebsim.errors import ConfigError, ParameterError
from lebsim.harness import (
    SWEEP_COLUMNS,
    MetricsSummary,
    ScenarioConfig,
    TimeslotRecord,
    Trajectory,
    apply_axis,
    build_trace,
    compute_metrics,
    dumps_records,
    dumps_summary,
    dumps_sweep,
    run_scenario,
    sweep,
    sweep_seed,
)
from lebsim.influence import PolicyParams
from lebsim.trace import save_trace_csv


def traj(truth, decision, attempted, m=1, cf=None):
    truth = np.array(truth)
    return Trajectory(truth, np.array(decision), truth.copy() if cf is None else np.array(cf), np.array(attempted, dtype=bool), m)


def small(**kw):
    base = dict(m=4, eval_len=300, seed=1)
    base.update(kw)
    cfg = ScenarioConfig(**{k: v for k, v in base.items() if k != "train_len"})
    cfg.trace.train_len = base.get("train_len", 200)
    return cfg


class TestMetrics:
    def test_ratios(self):
        # 10 attempts, 7 successes over 100 slots
        truth = [1] * 100
        decision = [-1] * 7 + [1] * 93
        attempted = [True] * 10 + [False] * 90
        s = compute_metrics(traj(truth, decision, attempted))
        assert (s.attack_success_ratio, s.overall_disruption_ratio) == (0.7, 0.07)

    def test_asr_082(self):
        truth = [1] * 200
        decision = [-1] * 164 + [1] * 36
        s = compute_metrics(traj(truth, decision, [True] * 200))
        assert s.attack_success_ratio == pytest.approx(0.82)

    def test_zero_attempts(self):
        s = compute_metrics(traj([1, -1], [1, 1], [False, False]))
        assert (s.attack_success_ratio, s.overall_disruption_ratio, s.attempts) == (0.0, 0.0, 0)

    def test_m0_is_error_rate(self):
        s = compute_metrics(traj([1, -1, 1, 1], [1, 1, -1, 1], [False] * 4, m=0))
        assert s.overall_disruption_ratio == 0.5

    def test_unattempted_errors_are_not_successes(self):
        s = compute_metrics(traj([1, 1], [-1, -1], [True, False]))
        assert s.successes == 1

    def test_from_records(self):
        recs = [
            TimeslotRecord(i, 1, np.zeros(2), np.zeros(2), d, 1, a, None, float("nan"), 0.0, False, np.ones(2), False)
            for i, (d, a) in enumerate([(-1, True), (1, True), (1, False)])
        ]
        s = compute_metrics(recs)
        assert (s.attempts, s.successes, s.elapsed) == (2, 1, 3)
        assert s.counterfactual_flip_rate == pytest.approx(1 / 3)

    def test_empty(self):
        with pytest.raises(ParameterError):
            compute_metrics([])


class TestConfig:
    def test_json_round_trip(self):
        cfg = ScenarioConfig(m=3, policy=PolicyParams(eta=2))
        back = ScenarioConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_unknown_key(self):
        d = ScenarioConfig().to_dict()
        d["bogus"] = 1
        with pytest.raises(ConfigError, match="bogus"):
            ScenarioConfig.from_dict(d)

    def test_schema_version(self):
        d = ScenarioConfig().to_dict()
        d["schema_version"] = 99
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(d)

    def test_partial_trace_keeps_scenario_defaults(self):
        cfg = ScenarioConfig.from_dict({"schema_version": 1, "trace": {"n_nodes": 10}})
        assert cfg.trace.n_nodes == 10
        assert cfg.trace.mu_busy_dbm == ScenarioConfig().trace.mu_busy_dbm

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="nope.json"):
            ScenarioConfig.load(tmp_path / "nope.json")

    @pytest.mark.parametrize("change", [{"m": 20}, {"m": -1}, {"defense": "X"}, {"rule": "Y"}, {"eval_len": 0}])
    def test_validate(self, change):
        with pytest.raises(ConfigError):
            ScenarioConfig(**change).validate()


class TestRun:
    def test_deterministic_bytes(self):
        cfg = small()
        r1, s1 = run_scenario(cfg)
        r2, s2 = run_scenario(cfg)
        assert dumps_records(r1) == dumps_records(r2)
        assert dumps_summary(cfg, s1) == dumps_summary(cfg, s2)

    def test_seed_changes_output(self):
        assert dumps_records(run_scenario(small(seed=1))[0]) != dumps_records(run_scenario(small(seed=2))[0])

    def test_counterfactual_consistency(self):
        recs, s = run_scenario(small(m=6))
        assert s.attempts > 0
        for r in recs:
            if not r.attempted:
                assert np.array_equal(r.submitted, r.truthful)
                assert r.counterfactual == r.decision
            else:
                assert np.array_equal(r.submitted[6:], r.truthful[6:])
                assert np.all((r.submitted >= -110) & (r.submitted <= -40))

    def test_summary_bounds(self):
        _, s = run_scenario(small(m=6))
        assert s.successes <= s.attempts <= s.elapsed == 300

    def test_m0_noise_free_is_perfect(self):
        cfg = small(m=0, defense="None", rule="Majority")
        for k in ("bias_sd_dbm", "sigma_min_dbm", "sigma_max_dbm", "drift_sd_dbm"):
            setattr(cfg.trace, k, 0.0)
        recs, s = run_scenario(cfg)
        assert s.overall_disruption_ratio == 0.0 and s.attempts == 0

    def test_m0_disruption_equals_error_rate(self):
        _, s = run_scenario(small(m=0))
        assert s.overall_disruption_ratio == s.fusion_error_rate

    def test_trace_file_replay(self, tmp_path):
        cfg = small()
        path = tmp_path / "t.csv"
        save_trace_csv(build_trace(cfg), path)
        _, a = run_scenario(cfg.replace(trace_path=str(path)))
        assert a.elapsed == 300

    def test_policy_run_and_audit(self):
        cfg = small(m=3, policy=PolicyParams(eta=1, cadence=50), eval_len=200)
        audit = []
        recs, s = run_scenario(cfg, audit=audit)
        assert all(0 < r.weights.max() <= 1.0 for r in recs)
        assert all(row[0] >= 200 for row in audit)

    def test_keep_records_false(self):
        traj, s = run_scenario(small(), keep_records=False)
        assert isinstance(traj, Trajectory) and compute_metrics(traj) == s


class TestSweep:
    def test_rows_and_csv(self):
        rows = sweep(small(), "alpha", [0.5, 0.85, 0.95], runner=lambda c: MetricsSummary(0.5, c.attacker.alpha, 1, 0, 1, 0, 0))
        assert [r.value for r in rows] == [0.5, 0.85, 0.95]
        assert [r.odr_mean for r in rows] == [0.5, 0.85, 0.95]
        lines = dumps_sweep(rows).splitlines()
        assert lines[0] == ",".join(SWEEP_COLUMNS) and len(lines) == 4

    def test_repeats_use_distinct_seeds(self):
        seen = []
        sweep(small(), "m", [2, 4], repeats=3, runner=lambda c: seen.append(c.seed) or MetricsSummary(0, 0, 0, 0, 1, 0, 0))
        assert len(set(seen)) == 6

    def test_paired_seeds_shared(self):
        assert sweep_seed(0, "m", 2, 1, paired=True) == sweep_seed(0, "m", 4, 1, paired=True)
        assert sweep_seed(0, "m", 2, 1) != sweep_seed(0, "m", 4, 1)

    @pytest.mark.parametrize("axis,value", [("alpha", 1.0), ("m", 20), ("m", 2.5), ("eta", 0), ("c1", 0.0), ("c2", -1.0), ("beta", 1)])
    def test_out_of_domain(self, axis, value):
        with pytest.raises(ParameterError, match=axis if axis != "beta" else "axis"):
            apply_axis(small(), axis, value)

    def test_policy_axes_enable_policy(self):
        cfg = apply_axis(small(), "eta", 2)
        assert cfg.policy is not None and cfg.policy.eta == 2

    def test_workers_match_serial(self):
        serial = sweep(small(eval_len=60), "m", [1, 2], repeats=2)
        parallel = sweep(small(eval_len=60), "m", [1, 2], repeats=2, workers=2)
        assert [r.runs for r in serial] == [r.runs for r in parallel]

    def test_empty_values(self):
        with pytest.raises(ParameterError):
            sweep(small(), "alpha", [])
