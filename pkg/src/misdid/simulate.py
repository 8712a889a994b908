"""Synthetic staggered-adoption panels and Monte Carlo drivers.

Outcomes are generated at the group level with unit cell sizes::

    Y[g, t] = intercept + time_slope * t + group_slope * g + effect[g, t] * D*[g, t] + e[g, t]

where ``D*`` is latent treatment. A share of the switching groups is
recorded one period late, so the observed switch trails the true one.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Literal, Sequence

import numpy as np

from ._parallel import pmap, stream
from .errors import EstimationError
from .estimators import estimate, twfe_misclassification_ratio
from .inference import resample_indices
from .panel import Panel
from .spectest import Window, _stat_values, _tau_arrays, critical_value, index_set

SCENARIOS = {
    # name: (misclassification on, trend violation on)
    "PTM": (True, False),
    "TVM": (True, True),
    "PTN": (False, False),
    "TVN": (False, True),
}
TEST_STATS = ("sum_pt", "max_pt", "sum_mc", "max_mc")
DEFAULT_ESTIMATORS = ("did", "did_s", "did_s_star")


@dataclass(frozen=True)
class DgpSpec:
    """Parameters of the synthetic design.

    ``te_draw`` controls whether the effect scale is drawn once per
    replication (shared by all groups) or once per group.
    ``never_treated`` puts the untreated groups at the highest group indices
    (``"last"``) or at random indices (``"random"``). Only with ``"last"`` does
    the trend violation differ systematically between adoption cohorts.
    """

    g: int = 600
    t: int = 15
    never_treated_share: float = 0.05
    intercept: float = 10.0
    time_slope: float = -0.4
    group_slope: float = 0.1
    te_mode: Literal["constant", "time_varying"] = "constant"
    te_mean: float = 4.0
    te_sd: float = 1.0
    ramp: tuple[float, float] = (0.2, 1.8)
    noise_sd: float = 1.0
    misclass_prob: float = 0.5
    last_period_exempt: bool = True
    trend_violation: bool = False
    te_draw: Literal["replication", "group"] = "replication"
    never_treated: Literal["last", "random"] = "last"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ramp", tuple(float(x) for x in self.ramp))
        if self.g < 2:
            raise ValueError("g must be >= 2")
        if self.t < 3:
            raise ValueError("t must be >= 3")
        for name in ("never_treated_share", "misclass_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.te_sd < 0 or self.noise_sd < 0:
            raise ValueError("standard deviations must be non-negative")
        if self.te_mode not in ("constant", "time_varying"):
            raise ValueError(f"unknown te_mode {self.te_mode!r}")
        if self.te_draw not in ("replication", "group"):
            raise ValueError(f"unknown te_draw {self.te_draw!r}")
        if self.never_treated not in ("last", "random"):
            raise ValueError(f"unknown never_treated placement {self.never_treated!r}")
        if len(self.ramp) != 2:
            raise ValueError("ramp needs two endpoints")

    def multiplier(self) -> np.ndarray:
        """Per-period effect multiplier, length ``t``."""
        if self.te_mode == "constant":
            return np.ones(self.t)
        lo, hi = self.ramp
        return lo + (hi - lo) * np.arange(self.t) / (self.t - 1)


def gen_panel(spec: DgpSpec, replicate_index: int) -> Panel:
    """One synthetic panel with latent truth attached.

    All random draws are made in a fixed order whatever the toggles, so
    panels built from specs differing only in ``misclass_prob`` or
    ``trend_violation`` share outcomes noise, adoption dates and effects.
    """
    G, T = spec.g, spec.t
    rng = stream(spec.seed, replicate_index)
    n_never = int(np.floor(spec.never_treated_share * G + 0.5))
    perm = rng.permutation(G)
    never = perm[:n_never] if spec.never_treated == "random" else np.arange(G - n_never, G)
    t0 = rng.integers(2, T + 1, size=G)
    late_u = rng.random(G)
    scale = rng.normal(spec.te_mean, spec.te_sd, size=1 if spec.te_draw == "replication" else G)
    e = rng.standard_normal((G, T))

    t0[never] = 0
    treated = t0 > 0
    late = treated & (late_u < spec.misclass_prob)
    if spec.last_period_exempt:
        late &= t0 < T
    t_obs = np.where(late, t0 + 1, t0)  # T + 1 means coded as never treated

    periods = np.arange(1, T + 1)
    d_true = (treated[:, None] & (periods[None, :] >= t0[:, None])).astype(float)
    d_obs = (t_obs[:, None] > 0) & (periods[None, :] >= t_obs[:, None])
    s_true = (periods[None, :] == t0[:, None]).astype(float)
    effect = np.broadcast_to(scale[:, None] if scale.size > 1 else scale, (G, 1)) * spec.multiplier()[None, :]

    gidx = np.arange(1, G + 1, dtype=float)
    y = spec.intercept + spec.time_slope * periods[None, :] + spec.group_slope * gidx[:, None]
    y = y + effect * d_true + spec.noise_sd * e
    if spec.trend_violation:
        y = y + periods[None, :] * gidx[:, None] / G
    return Panel(
        group_ids=tuple(range(1, G + 1)),
        n=np.ones((G, T)),
        y=y,
        d=d_obs.astype(np.int8),
        d_true=d_true,
        s_true=s_true,
        effect=effect,
    )


def true_estimand_oracle(panel: Panel) -> dict[str, float]:
    """Effects averaged over observed switching cells and over true switching units."""
    if not panel.has_truth:
        raise EstimationError("latent truth required")
    n, eff = panel.n, panel.effect
    sw = np.zeros(panel.d.shape, dtype=bool)
    sw[:, 1:] = (panel.d[:, :-1] == 0) & (panel.d[:, 1:] == 1)
    m_s = (n * sw).sum()
    m_star = (n[:, 1:] * panel.s_true[:, 1:]).sum()
    if not m_star > 0:
        raise EstimationError("no true switchers")
    delta_s = float((n * sw * eff).sum() / m_s) if m_s > 0 else float("nan")
    delta_star = float((n[:, 1:] * panel.s_true[:, 1:] * eff[:, 1:]).sum() / m_star)
    return {"delta_s": delta_s, "delta_s_star": delta_star}


def benchmark_effect(panel: Panel, kind: str = "mean_effect") -> float:
    """Target the estimates are compared to.

    ``mean_effect`` averages the effect over groups and periods ``2..T``
    (the replication's effect in constant mode). ``delta_s_star`` uses the
    finite-sample true-switcher estimand.
    """
    if kind == "mean_effect":
        return float(panel.effect[:, 1:].mean())
    if kind == "delta_s_star":
        return true_estimand_oracle(panel)["delta_s_star"]
    raise ValueError(f"unknown benchmark {kind!r}")


@dataclass
class EstimatorSummary:
    mean_bias: float
    rmse: float
    n: int
    failed: int = 0


@dataclass
class McSummary:
    """Aggregated Monte Carlo output.

    ``estimators`` maps estimator name to bias summaries; ``tests`` maps
    scenario to statistic to rejection rate.
    """

    kind: Literal["estimators", "tests"]
    spec: dict
    reps: int
    benchmark: str = "mean_effect"
    estimators: dict[str, EstimatorSummary] = field(default_factory=dict)
    tests: dict[str, dict[str, float]] = field(default_factory=dict)
    critical_values: dict[str, dict[str, float]] = field(default_factory=dict)
    level: float | None = None
    warp: bool | None = None
    runtime_s: float = 0.0

    def to_dict(self, include_runtime: bool = False) -> dict:
        out = asdict(self)
        if not include_runtime:
            out.pop("runtime_s")
        return out


def _pseudo_estimate(panel: Panel, name: str, bench: float, options: dict) -> float:
    if name == "twfe_predicted":
        return bench * twfe_misclassification_ratio(panel)
    if name == "oracle_delta_s":
        return true_estimand_oracle(panel)["delta_s"]
    if name == "oracle_delta_s_star":
        return true_estimand_oracle(panel)["delta_s_star"]
    return estimate(panel, name, **options.get(name, {})).point


def _estimator_rep(rep: int, spec: DgpSpec, names: tuple, benchmark: str, options: dict) -> np.ndarray:
    panel = gen_panel(spec, rep)
    bench = benchmark_effect(panel, benchmark)
    out = np.full(len(names), np.nan)
    for k, name in enumerate(names):
        try:
            out[k] = _pseudo_estimate(panel, name, bench, options) - bench
        except EstimationError:
            pass
    return out


def run_mc_estimators(
    spec: DgpSpec,
    r: int,
    estimators: Sequence[str] = DEFAULT_ESTIMATORS,
    workers: int = 1,
    benchmark: str = "mean_effect",
    options: dict | None = None,
) -> McSummary:
    """Bias and RMSE of each estimator over ``r`` replications.

    Besides the estimator names understood by :func:`misdid.estimate`,
    ``twfe_predicted`` (benchmark times the misclassification attenuation
    factor) and the two oracle estimands are accepted. A replication on
    which an estimator fails is left out of that estimator's summary and
    counted as failed.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    names = tuple(estimators)
    start = time.perf_counter()
    fn = partial(_estimator_rep, spec=spec, names=names, benchmark=benchmark, options=options or {})
    err = np.array(pmap(fn, range(r), workers=workers, processes=True)).reshape(r, len(names))
    summary = {}
    for k, name in enumerate(names):
        col = err[:, k]
        ok = col[np.isfinite(col)]
        if ok.size:
            summary[name] = EstimatorSummary(float(ok.mean()), float(np.sqrt(np.mean(ok * ok))), int(ok.size), int(r - ok.size))
        else:
            summary[name] = EstimatorSummary(float("nan"), float("nan"), 0, r)
    return McSummary(
        kind="estimators",
        spec=asdict(spec),
        reps=r,
        benchmark=benchmark,
        estimators=summary,
        runtime_s=time.perf_counter() - start,
    )


def _grids(n, y, d, pt_index, mc_index):
    return _tau_arrays(n, y, d, "pt", pt_index), _tau_arrays(n, y, d, "mc", mc_index)


def _four_stats(pt, mc, g, base=None) -> np.ndarray:
    """(sum_pt, max_pt, sum_mc, max_mc); recentered on ``base`` when given."""
    out = []
    for k, (vals, ok) in enumerate((pt, mc)):
        if base is not None:
            bvals, bok = base[k]
            ok = ok & bok
            vals = vals - bvals
            if not ok.any():
                out += [np.nan, np.nan]
                continue
        out += list(_stat_values(vals, ok, g))
    return np.array(out)


def _test_rep(rep: int, spec: DgpSpec, scen: int, warp: bool, b: int, window: Window | None, level: float) -> np.ndarray:
    """Warp: ``(2, 4)`` observed and recentered statistics; otherwise ``(1, 4)`` reject flags."""
    panel = gen_panel(spec, rep)
    n, y, d, G = panel.n, panel.y, panel.d, panel.G
    pt_index = index_set(panel.T, "pt", window)
    mc_index = index_set(panel.T, "mc", window)
    base = _grids(n, y, d, pt_index, mc_index)
    stats = _four_stats(*base, G)
    if warp:
        rows = resample_indices(G, stream(spec.seed, rep, 1, scen))
        boot = _four_stats(*_grids(n[rows], y[rows], d[rows], pt_index, mc_index), G, base)
        return np.vstack([stats, boot])
    draws = np.empty((b, 4))
    for j in range(b):
        rows = resample_indices(G, stream(spec.seed, rep, 2, scen, j))
        draws[j] = _four_stats(*_grids(n[rows], y[rows], d[rows], pt_index, mc_index), G, base)
    reject = np.zeros(4)
    for k in range(4):
        good = draws[:, k][np.isfinite(draws[:, k])]
        reject[k] = float(good.size > 0 and stats[k] > critical_value(good, level))
    return reject[None, :]


def run_mc_tests(
    spec_base: DgpSpec,
    scenarios: Sequence[str] = tuple(SCENARIOS),
    r: int = 500,
    warp: bool = True,
    level: float = 0.05,
    b: int = 199,
    window: Window | None = None,
    workers: int = 1,
) -> McSummary:
    """Rejection rates of the four pre-treatment tests under each scenario.

    With ``warp`` each replication contributes a single bootstrap resample;
    the ``r`` recentered draws are pooled into one critical value per
    statistic. Otherwise every replication runs its own ``b``-draw bootstrap.
    Scenarios switch misclassification (at ``spec_base.misclass_prob``) and
    the trend violation on or off; everything else is held fixed.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    start = time.perf_counter()
    order = list(SCENARIOS)
    rates, cvs = {}, {}
    for name in scenarios:
        if name not in SCENARIOS:
            raise ValueError(f"unknown scenario {name!r}")
        mis, trend = SCENARIOS[name]
        spec = replace(spec_base, misclass_prob=spec_base.misclass_prob if mis else 0.0, trend_violation=trend)
        fn = partial(_test_rep, spec=spec, scen=order.index(name), warp=warp, b=b, window=window, level=level)
        res = np.array(pmap(fn, range(r), workers=workers, processes=True))
        if warp:
            stats, boot = res[:, 0], res[:, 1]
            rates[name], cvs[name] = {}, {}
            for k, s in enumerate(TEST_STATS):
                good = boot[:, k][np.isfinite(boot[:, k])]
                cv = critical_value(good, level) if good.size else float("nan")
                cvs[name][s] = float(cv)
                rates[name][s] = float(np.mean(stats[:, k] > cv)) if good.size else float("nan")
        else:
            flags = res[:, 0]
            rates[name] = {s: float(flags[:, k].mean()) for k, s in enumerate(TEST_STATS)}
    return McSummary(
        kind="tests",
        spec=asdict(spec_base),
        reps=r,
        tests=rates,
        critical_values=cvs,
        level=level,
        warp=warp,
        runtime_s=time.perf_counter() - start,
    )
