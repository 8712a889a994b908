import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from misdid._parallel import stream
from misdid.errors import BootstrapError, EstimationError
from misdid.inference import (
    BootstrapConfig,
    bootstrap_statistic,
    estimate_with_ci,
    percentile_interval,
    resample_groups,
    resample_indices,
)
from misdid.panel import validate
from misdid.simulate import DgpSpec, gen_panel

from conftest import make_panel, noiseless_panel, random_panel


class TestConfig:
    @pytest.mark.parametrize("kw", [{"b": 0}, {"level": 1.0}, {"level": 0.0}, {"mode": "studentized"}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            BootstrapConfig(**kw)


class TestResample:
    def test_reproducible(self):
        p = make_panel(d=[[0, 1], [0, 0]], y=[[0, 1], [2, 3]])
        a = resample_groups(p, stream(5, 0))
        b = resample_groups(p, stream(5, 0))
        assert_array_equal(a.y, b.y)
        assert a.G == 2 and len(set(a.group_ids)) == 2

    def test_series_intact_and_valid(self):
        p = random_panel(np.random.default_rng(3), G=15, T=5)
        rng = stream(9, 1)
        rows = resample_indices(p.G, stream(9, 1))
        q = resample_groups(p, rng)
        for k, r in enumerate(rows):
            assert_array_equal(q.y[k], p.y[r])
            assert_array_equal(q.n[k], p.n[r])
            assert_array_equal(q.d[k], p.d[r])
        assert validate(q).ok

    def test_uniform_frequency(self):
        G, draws = 5, 10_000
        first = np.array([resample_indices(G, stream(0, j))[0] for j in range(draws)])
        p = 1.0 / G
        band = 3 * np.sqrt(p * (1 - p) / draws)
        for j in range(G):
            assert abs(np.mean(first == j) - p) < band

    def test_single_group_rejected(self):
        from misdid.panel import Panel

        p = Panel.__new__(Panel)  # bypass construction checks
        object.__setattr__(p, "y", np.zeros((1, 2)))
        with pytest.raises(ValueError):
            resample_groups(p, stream(0))


class TestBootstrapStatistic:
    def test_constant_statistic(self):
        p = random_panel(np.random.default_rng(0))
        draws = bootstrap_statistic(p, lambda q: 1.25, BootstrapConfig(b=20, seed=1))
        assert_array_equal(draws.values, 1.25)
        assert draws.b == 20

    def test_seeded_and_thread_independent(self):
        p = random_panel(np.random.default_rng(1), G=25)
        a = bootstrap_statistic(p, "did_s", BootstrapConfig(b=40, seed=3, threads=1))
        b = bootstrap_statistic(p, "did_s", BootstrapConfig(b=40, seed=3, threads=1))
        c = bootstrap_statistic(p, "did_s", BootstrapConfig(b=40, seed=3, threads=4))
        assert_array_equal(a.values, b.values)
        assert_array_equal(a.values, c.values)

    def test_noiseless_did(self):
        p = noiseless_panel(G=50, T=6, delta=2.0, n_never=10)
        draws = bootstrap_statistic(p, "did", BootstrapConfig(b=50, seed=0))
        assert_allclose(draws.values, 2.0, rtol=0, atol=1e-12)

    def test_skipped_draws(self):
        # one switching group among many: some resamples miss it
        d = np.zeros((12, 3), dtype=int)
        d[0, 2] = 1
        p = make_panel(d=d, y=np.random.default_rng(0).normal(size=(12, 3)))
        draws = bootstrap_statistic(p, "did", BootstrapConfig(b=60, seed=2))
        assert draws.skipped > 0
        assert len(draws.values) + draws.skipped == 60

    def test_all_skipped(self):
        def fail(_):
            raise EstimationError("no observed switchers")

        p = random_panel(np.random.default_rng(0))
        with pytest.raises(BootstrapError, match="bootstrap degenerate"):
            bootstrap_statistic(p, fail, BootstrapConfig(b=5))


class TestPercentile:
    def test_order_statistics_and_monotone(self):
        v = np.random.default_rng(4).normal(size=101)
        lo90, hi90 = percentile_interval(v, 0.90)
        lo99, hi99 = percentile_interval(v, 0.99)
        assert lo90 in v and hi90 in v
        assert lo99 <= lo90 <= hi90 <= hi99


class TestEstimateWithCi:
    def test_noiseless(self):
        p = noiseless_panel(G=40, T=5, delta=3.0, n_never=10, integer=True)
        res = estimate_with_ci(p, "did_s", BootstrapConfig(b=30, seed=1))
        assert res.se == 0.0
        assert res.ci_low == res.ci_high == res.point == 3.0
        assert res.p_value_ate_zero == 0.0

    def test_single_draw(self):
        p = random_panel(np.random.default_rng(2), G=20)
        res = estimate_with_ci(p, "did", BootstrapConfig(b=1, seed=0))
        assert "se_undefined" in res.flags
        assert res.se is None and res.ci_low is None

    def test_fields(self):
        p = random_panel(np.random.default_rng(6), G=30)
        res = estimate_with_ci(p, "did_s_star", BootstrapConfig(b=50, seed=0), clamp_lambda=True)
        assert res.extra["b"] == 50
        assert res.extra["b_used"] + res.extra["skipped"] == 50
        assert res.se > 0
        assert 0.0 <= res.p_value_ate_zero <= 1.0

    def test_twfe(self):
        p = noiseless_panel(G=30, T=5, delta=1.0)
        res = estimate_with_ci(p, "twfe", BootstrapConfig(b=10, seed=0))
        assert_allclose(res.point, 1.0, atol=1e-10)


def test_coverage_monte_carlo():
    # percentile intervals for the observed-switcher estimator, 500 panels
    spec = DgpSpec(g=300, t=15, seed=77)
    hits = []
    for rep in range(500):
        p = gen_panel(spec, rep)
        res = estimate_with_ci(p, "did_s", BootstrapConfig(b=99, seed=rep))
        truth = p.effect[0, 0]
        hits.append(res.ci_low <= truth <= res.ci_high)
    assert abs(np.mean(hits) - 0.95) <= 0.04
