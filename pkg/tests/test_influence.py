import math
from itertools import combinations

import numpy as np
import pytest

from lebsim.errors import ParameterError
from lebsim.fusion import FusionCenter
from lebsim.influence import (
    InfluenceLimiter,
    KsStat,
    PolicyParams,
    batch_influence,
    cap_weights,
    enforce,
    enumerate_subsets,
    estimate_influence,
    incidence_matrix,
    ks_statistic,
    refresh_ks,
    subset_count,
    threshold,
    write_audit_csv,
)
from lebsim.trace import TraceParams, synthetic_trace


def majority_center(n, seed=0):
    ds = synthetic_trace(TraceParams(n_nodes=n, length=300, train_len=200), seed)
    return FusionCenter(rule="Majority").calibrate(ds), ds


class TestKs:
    def test_hand_cases(self):
        assert ks_statistic([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3, abs=1e-15)
        assert ks_statistic([1, 2, 3], [3, 1, 2]) == 0.0
        assert ks_statistic([0, 1], [10, 11]) == 1.0

    def test_empty(self):
        with pytest.raises(ParameterError):
            ks_statistic([], [1.0])

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=30), rng.normal(0.5, 1, 17)
        assert ks_statistic(a, b) == ks_statistic(b, a)


class TestThreshold:
    def test_half_at_midpoint(self):
        assert threshold(PolicyParams(), 10, 0.0, 20) == 0.5

    def test_sigmoid_value(self):
        assert threshold(PolicyParams(c1=0.6), 5, 0.0, 20) == pytest.approx(1 / (1 + math.e**3), rel=1e-12)
        assert threshold(PolicyParams(c1=0.6), 5, 0.0, 20) == pytest.approx(0.0474, abs=5e-5)

    def test_ks_penalty(self):
        assert threshold(PolicyParams(c1=0.6, c2=0.08), 5, 0.5, 20) == pytest.approx(0.0074, abs=5e-5)

    def test_floor(self):
        assert threshold(PolicyParams(c2=1.0), 1, 5.0, 20) == 1e-4

    def test_domain(self):
        with pytest.raises(ParameterError):
            threshold(PolicyParams(), 11, 0.0, 20)
        with pytest.raises(ParameterError):
            threshold(PolicyParams(), 0, 0.0, 20)

    def test_params_validation(self):
        with pytest.raises(ParameterError):
            PolicyParams(c1=0).validate(20)
        with pytest.raises(ParameterError):
            PolicyParams(c2=-1).validate(20)
        with pytest.raises(ParameterError):
            PolicyParams(eta=21).validate(20)


class TestSubsets:
    @pytest.mark.parametrize("n,eta", [(20, 4), (6, 6), (7, 2), (5, 1)])
    def test_count(self, n, eta):
        subs = enumerate_subsets(n, eta)
        expected = sum(math.comb(n, k) for k in range(1, min(eta, n // 2) + 1))
        assert len(subs) == subset_count(n, eta) == expected
        assert len(set(subs)) == len(subs)

    def test_n20_eta4(self):
        assert subset_count(20, 4) == 6195


class TestEstimate:
    def test_full_set_majority_is_one(self):
        fc, ds = majority_center(5)
        est = estimate_influence(range(5), ds.values[200:216], fc.decide_counterfactual)
        assert est.value == 1.0

    def test_counting(self):
        window = np.array([[0.0, 50.0], [0.0, 200.0], [0.0, 60.0], [0.0, 70.0]])
        # pinning node 0 to the minimum flips every row except the second
        est = estimate_influence([0], window, lambda x: 1 if x.sum() >= 0 else -1)
        assert (est.flips, est.window_len, est.value) == (3, 4, 0.75)

    def test_singleton_among_concordant(self):
        fc, _ = majority_center(20)
        window = np.tile(fc.thresholds + 5.0, (8, 1))
        assert estimate_influence([3], window, fc.decide_counterfactual).value == 0.0

    def test_empty_window(self):
        with pytest.raises(ParameterError):
            estimate_influence([0], np.empty((0, 3)), lambda x: 1)

    @pytest.mark.parametrize("rule", ["Majority", "And", "Or", "LinearSVM", "LogisticRegression"])
    def test_batch_matches_replay(self, rule):
        ds = synthetic_trace(TraceParams(n_nodes=6, length=300, train_len=200), 4)
        fc = FusionCenter(rule=rule).calibrate(ds)
        w = np.random.default_rng(1).uniform(0.01, 1, 6)
        subs = enumerate_subsets(6, 3)
        window = ds.values[200:216]
        batch = batch_influence(fc, w, window, incidence_matrix(subs, 6))
        cf = lambda x: fc.decide_counterfactual(x, w)
        assert batch.tolist() == [estimate_influence(s, window, cf).value for s in subs]


class TestCaps:
    def test_no_violators(self):
        caps, _ = cap_weights(np.ones(4), incidence_matrix([(0,), (1, 2)], 4), np.array([False, False]), np.array([0.1, 0.1]))
        assert caps.tolist() == [1.0] * 4

    def test_singleton_already_below_target(self):
        inc = incidence_matrix([(0,)], 20)
        caps, scale = cap_weights(np.ones(20), inc, np.array([True]), np.array([0.1]))
        assert caps[0] == 1.0 and scale[0] == 1.0

    def test_pair_closed_form(self):
        w = np.array([2.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])  # pair mass 4 / 10 = 0.4
        inc = incidence_matrix([(0, 1)], 8)
        caps, scale = cap_weights(w, inc, np.array([True]), np.array([0.05]))
        assert scale[0] == pytest.approx(0.05 * 6 / (4 * 0.95))
        capped = w * caps
        assert capped[:2].sum() / capped.sum() == pytest.approx(0.05, rel=1e-12)

    def test_enforce_no_violation_identity(self):
        fc, _ = majority_center(20)
        window = np.tile(fc.thresholds + 5.0, (8, 1))
        out = enforce(PolicyParams(c1=0.6, eta=2), np.zeros(20), window, fc, np.ones(20))
        assert not out.active and out.violators == []

    def test_enforce_records_provenance(self):
        fc, ds = majority_center(6)
        out = enforce(PolicyParams(c1=0.6, eta=3), np.zeros(6), ds.values[200:264], fc, np.ones(6))
        for j, subset in out.provenance.items():
            assert j in subset and out.caps[j] < 1.0
        assert np.all((out.caps > 0) & (out.caps <= 1.0))

    def test_enforce_is_pure(self):
        fc, ds = majority_center(6)
        for x in ds.values[200:230]:
            fc.decide(x)
        before = fc.snapshot()
        enforce(PolicyParams(eta=3), np.zeros(6), ds.values[230:262], fc, fc.current_weights)
        assert len(fc.window) == len(before.window)
        assert all(np.array_equal(a, b) for a, b in zip(fc.window, before.window))


class TestRefresh:
    def test_resample_is_small(self):
        small = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            train = rng.normal(-90, 4, 600)
            st = [KsStat(0, np.sort(train))]
            refresh_ks(st, rng.choice(train, 64)[:, None])
            small += st[0].d_ks < 0.2
        assert small >= 95

    def test_shift_is_near_one(self):
        rng = np.random.default_rng(0)
        st = [KsStat(0, np.sort(rng.normal(-90, 2, 600)))]
        refresh_ks(st, rng.normal(-80, 2, (64, 1)))
        assert st[0].d_ks > 0.95

    def test_short_window_skipped(self):
        st = [KsStat(0, np.array([1.0, 2.0]), d_ks=0.3)]
        refresh_ks(st, np.zeros((0, 1)))
        refresh_ks(st, np.zeros((7, 1)))
        assert st[0].d_ks == 0.3


class TestLimiter:
    def test_cadence_and_audit(self, tmp_path):
        ds = synthetic_trace(TraceParams(n_nodes=6, length=400, train_len=200), 2)
        fc = FusionCenter(rule="Majority").calibrate(ds)
        lim = InfluenceLimiter(PolicyParams(eta=2, cadence=10, window=16), ds.values[:200], ds.bounds)
        lim.keep_audit = True
        for i, x in enumerate(ds.values[200:245]):
            fc.decide(x, lim.caps.caps if lim.caps.active else None)
            lim.observe(x, 200 + i, fc)
        assert lim.slots_seen == 45
        assert all(r[0] in (209, 219, 229, 239) for r in lim.audit)
        path = tmp_path / "audit.csv"
        write_audit_csv(lim.audit, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "slot,subset,influence,delta,capped,scale"
        assert len(lines) == len(lim.audit) + 1
