import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from misdid.errors import EstimationError
from misdid.estimators import did_s, did_s_star
from misdid.simulate import (
    SCENARIOS,
    TEST_STATS,
    DgpSpec,
    benchmark_effect,
    gen_panel,
    run_mc_estimators,
    run_mc_tests,
    true_estimand_oracle,
)

from conftest import brute_delta, make_panel

small = DgpSpec(g=60, t=6, seed=11)


class TestDgpSpec:
    @pytest.mark.parametrize(
        "kw",
        [{"g": 1}, {"t": 2}, {"misclass_prob": 1.5}, {"never_treated_share": -0.1}, {"noise_sd": -1},
         {"te_mode": "jump"}, {"te_draw": "cell"}, {"never_treated": "first"}, {"ramp": (1, 2, 3)}],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            DgpSpec(**kw)

    def test_ramp_endpoints(self):
        m = DgpSpec(t=15, te_mode="time_varying").multiplier()
        assert_allclose([m[0], m[-1]], [0.2, 1.8])
        assert_allclose(np.diff(m), 1.6 / 14)
        assert_array_equal(DgpSpec(t=15).multiplier(), 1.0)


class TestGenPanel:
    @given(st.integers(0, 10_000), st.integers(0, 50))
    @settings(max_examples=30, deadline=None)
    def test_invariants(self, seed, rep):
        spec = dataclasses.replace(small, seed=seed)
        p = gen_panel(spec, rep)
        assert p.report.ok
        assert (np.diff(p.d, axis=1) >= 0).all()
        assert (np.diff(p.d_true, axis=1) >= 0).all()
        # coding is never early and at most one period late
        assert (p.d <= p.d_true).all()
        lag = p.d_true[:, :-1] - p.d[:, 1:]
        assert (lag <= 0).all()
        # period-T adopters are never coded late
        last = p.s_true[:, -1] == 1
        assert_array_equal(p.d[last, -1], 1)
        never = p.d_true.sum(axis=1) == 0
        assert never.sum() == round(spec.never_treated_share * spec.g)
        assert_array_equal(p.d[never], 0)
        assert (p.s_true.sum(axis=1) == (~never)).all()

    def test_never_treated_last(self):
        p = gen_panel(DgpSpec(g=40, t=5, never_treated_share=0.1), 0)
        never = np.flatnonzero(p.d_true.sum(axis=1) == 0)
        assert_array_equal(never, [36, 37, 38, 39])

    def test_never_treated_random(self):
        p = gen_panel(DgpSpec(g=200, t=5, never_treated="random", seed=4), 0)
        never = np.flatnonzero(p.d_true.sum(axis=1) == 0)
        assert len(never) == 10 and never.min() < 190

    def test_no_misclassification(self):
        p = gen_panel(dataclasses.replace(small, misclass_prob=0.0), 3)
        assert_array_equal(p.d, p.d_true)

    def test_late_share(self):
        spec = DgpSpec(g=4000, t=6, seed=1)
        p = gen_panel(spec, 0)
        eligible = p.s_true[:, 1:-1].sum(axis=1) == 1  # true start in 2..T-1
        late = (p.d_true - p.d).sum(axis=1) > 0
        share = late[eligible].mean()
        assert abs(share - 0.5) < 3 * np.sqrt(0.25 / eligible.sum())

    def test_noiseless_recovers_effect(self):
        spec = DgpSpec(g=120, t=8, noise_sd=0.0, te_sd=0.0, seed=2)
        p = gen_panel(spec, 0)
        assert_allclose(did_s(p).point, 4.0, atol=1e-10)
        assert_allclose(did_s_star(p).point, 4.0, atol=1e-10)

    def test_reproducible(self):
        a, b = gen_panel(small, 5), gen_panel(small, 5)
        assert_array_equal(a.y, b.y)
        assert_array_equal(a.d, b.d)
        assert not np.array_equal(a.y, gen_panel(small, 6).y)

    def test_scenarios_share_draws(self):
        base = dataclasses.replace(small, misclass_prob=0.5)
        ptm = gen_panel(base, 2)
        ptn = gen_panel(dataclasses.replace(base, misclass_prob=0.0), 2)
        tvm = gen_panel(dataclasses.replace(base, trend_violation=True), 2)
        # switching misclassification off changes only the recorded treatment
        assert_array_equal(ptm.y, ptn.y)
        assert not np.array_equal(ptm.d, ptn.d)
        # the trend violation changes only outcomes, by t * g / G
        assert_array_equal(ptm.d, tvm.d)
        t = np.arange(1, small.t + 1)
        g = np.arange(1, small.g + 1)
        assert_allclose(tvm.y - ptm.y, t[None, :] * g[:, None] / small.g, atol=1e-12)

    def test_group_level_effect_draw(self):
        p = gen_panel(DgpSpec(g=30, t=4, te_draw="group", seed=3), 0)
        assert len(np.unique(p.effect[:, 0])) == 30


class TestOracle:
    def test_homogeneous(self):
        p = gen_panel(DgpSpec(g=80, t=6, te_sd=0.0, seed=1, te_mode="time_varying"), 0)
        truth = true_estimand_oracle(p)
        s, star = brute_delta(p)
        assert_allclose([truth["delta_s"], truth["delta_s_star"]], [s, star], rtol=1e-12)

    def test_fractional_mixture(self):
        # half the units of group 1 start at t=2, the other half at t=3
        d = [[0, 0, 1], [0, 0, 0]]
        s_true = [[0, 0.5, 0.5], [0, 0, 0]]
        d_true = [[0, 0.5, 1], [0, 0, 0]]
        effect = [[0, 2.0, 6.0], [0, 0, 0]]
        p = make_panel(d=d, y=np.zeros((2, 3)), d_true=d_true, s_true=s_true, effect=effect)
        truth = true_estimand_oracle(p)
        assert truth["delta_s"] == 6.0
        assert truth["delta_s_star"] == 4.0

    def test_errors(self, f1):
        with pytest.raises(EstimationError, match="latent truth"):
            true_estimand_oracle(f1)
        with pytest.raises(ValueError):
            benchmark_effect(gen_panel(small, 0), "median")

    def test_benchmarks(self):
        p = gen_panel(small, 0)
        assert_allclose(benchmark_effect(p), p.effect[0, 0])
        assert_allclose(benchmark_effect(p, "delta_s_star"), true_estimand_oracle(p)["delta_s_star"])


class TestMcEstimators:
    def test_zero_bias_without_noise(self):
        spec = DgpSpec(g=60, t=6, noise_sd=0.0, seed=0)
        res = run_mc_estimators(spec, 5, ["did_s", "did_s_star", "oracle_delta_s_star"])
        for name in ("did_s", "did_s_star", "oracle_delta_s_star"):
            assert abs(res.estimators[name].mean_bias) < 1e-10
            assert res.estimators[name].n == 5

    def test_rmse_bounds_bias(self):
        res = run_mc_estimators(small, 20, ["did", "did_s", "twfe", "twfe_predicted"])
        for s in res.estimators.values():
            assert s.rmse >= abs(s.mean_bias) - 1e-12
        assert res.estimators["did"].mean_bias < 0

    def test_workers_do_not_change_results(self):
        a = run_mc_estimators(small, 8, workers=1).to_dict()
        b = run_mc_estimators(small, 8, workers=2).to_dict()
        assert a == b
        assert "runtime_s" not in a

    def test_failures_counted(self):
        spec = DgpSpec(g=2, t=3, never_treated_share=0.5, seed=0)
        res = run_mc_estimators(spec, 10, ["did_s"])
        s = res.estimators["did_s"]
        assert s.n + s.failed == 10

    def test_rejects_zero_reps(self):
        with pytest.raises(ValueError):
            run_mc_estimators(small, 0)


class TestMcTests:
    def test_warp_layout(self):
        res = run_mc_tests(DgpSpec(g=80, t=5, seed=2), r=40)
        assert set(res.tests) == set(SCENARIOS)
        for rates in res.tests.values():
            assert set(rates) == set(TEST_STATS)
            assert all(0.0 <= v <= 1.0 for v in rates.values())
        assert res.warp and set(res.critical_values["PTM"]) == set(TEST_STATS)

    def test_non_warp(self):
        res = run_mc_tests(DgpSpec(g=60, t=5, seed=2), ["PTN", "TVM"], r=6, warp=False, b=19)
        assert set(res.tests) == {"PTN", "TVM"}
        assert res.critical_values == {}

    def test_power_against_violation(self):
        res = run_mc_tests(DgpSpec(g=300, t=8, seed=3), ["TVN"], r=60)
        assert res.tests["TVN"]["sum_pt"] > 0.9

    def test_scenario_subset_reproducible(self):
        spec = DgpSpec(g=60, t=5, seed=8)
        full = run_mc_tests(spec, r=20)
        part = run_mc_tests(spec, ["PTN"], r=20)
        assert full.tests["PTN"] == part.tests["PTN"]

    def test_rejects(self):
        with pytest.raises(ValueError):
            run_mc_tests(small, ["XYZ"], r=2)
        with pytest.raises(ValueError):
            run_mc_tests(small, r=2, level=1.0)
