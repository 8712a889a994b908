"""Group-level nonparametric bootstrap.

Every draw resamples ``G`` whole groups with replacement; draw ``j`` uses
its own random stream derived from ``(seed, j)``, so results do not depend
on the number of worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Literal, Union

import numpy as np

from ._parallel import pmap, stream
from .errors import BootstrapError, EstimationError
from .estimators import EstimateResult, estimate
from .panel import Panel

Statistic = Union[str, Callable[[Panel], float]]


@dataclass(frozen=True)
class BootstrapConfig:
    b: int = 999
    seed: int = 0
    level: float = 0.95
    mode: Literal["percentile_ci", "recentered_test"] = "percentile_ci"
    threads: int = 1

    def __post_init__(self):
        if self.b < 1:
            raise ValueError("bootstrap draws must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if self.mode not in ("percentile_ci", "recentered_test"):
            raise ValueError(f"unknown bootstrap mode {self.mode!r}")


@dataclass
class BootstrapDraws:
    """Statistic values on the usable resamples, in draw order."""

    values: np.ndarray
    skipped: int = 0
    draw_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def b(self) -> int:
        return len(self.values) + self.skipped


def resample_indices(G: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, G, size=G)


def resample_groups(panel: Panel, rng: np.random.Generator) -> Panel:
    """Draw ``G`` groups with replacement, keeping each group's series intact.

    Drawn groups are relabelled ``0..G-1`` by draw position.
    """
    if panel.G < 2:
        raise ValueError("need at least 2 groups to resample")
    rows = resample_indices(panel.G, rng)
    return panel.take(rows, group_ids=range(panel.G))


def _as_callable(statistic: Statistic, options: dict) -> Callable[[Panel], float]:
    if callable(statistic):
        return statistic
    return lambda p: estimate(p, statistic, **options).point


def _one_draw(j: int, panel: Panel, fn: Callable[[Panel], float], seed: int) -> float:
    sample = resample_groups(panel, stream(seed, j))
    try:
        return float(fn(sample))
    except EstimationError:
        return float("nan")


def bootstrap_statistic(panel: Panel, statistic: Statistic, cfg: BootstrapConfig, **options) -> BootstrapDraws:
    """Evaluate ``statistic`` on ``cfg.b`` group resamples.

    ``statistic`` is an estimator name (``did``, ``did_s``, ``did_s_star``,
    ``twfe``) with keyword ``options``, or any callable ``Panel -> float``. A
    draw on which the statistic raises :class:`EstimationError` (e.g. no
    switchers drawn) is skipped and counted.
    """
    fn = _as_callable(statistic, options)
    raw = np.array(pmap(partial(_one_draw, panel=panel, fn=fn, seed=cfg.seed), range(cfg.b), workers=cfg.threads))
    ok = np.isfinite(raw)
    if not ok.any():
        raise BootstrapError("bootstrap degenerate: statistic undefined on every draw")
    return BootstrapDraws(values=raw[ok], skipped=int((~ok).sum()), draw_index=np.flatnonzero(ok))


def percentile_interval(values: np.ndarray, level: float) -> tuple[float, float]:
    """Equal-tailed percentile interval; endpoints are order statistics of ``values``."""
    a = (1.0 - level) / 2.0
    lo = float(np.quantile(values, a, method="lower"))
    hi = float(np.quantile(values, 1.0 - a, method="higher"))
    return lo, hi


def estimate_with_ci(panel: Panel, estimator: str, cfg: BootstrapConfig, **options) -> EstimateResult:
    """Point estimate plus bootstrap standard error, percentile CI and a test of a zero effect.

    The p-value is the share of recentered draws ``|theta_b - theta|`` at
    least as large as ``|theta|``.
    """
    res = estimate(panel, estimator, **options)
    draws = bootstrap_statistic(panel, estimator, cfg, **options)
    vals = draws.values
    res.extra.update({"b": cfg.b, "b_used": len(vals), "skipped": draws.skipped, "level": cfg.level, "seed": cfg.seed})
    if draws.skipped:
        res.flags.append(f"bootstrap_skipped:{draws.skipped}")
    if len(vals) < 2:
        res.flags.append("se_undefined")
        return res
    res.se = float(np.std(vals, ddof=1))
    res.ci_low, res.ci_high = percentile_interval(vals, cfg.level)
    if not res.ci_low <= res.point <= res.ci_high:
        res.flags.append("ci_excludes_point")
    res.p_value_ate_zero = float(np.mean(np.abs(vals - res.point) >= abs(res.point)))
    return res
