"""Pre-treatment moment-equality tests for misclassification and parallel trends.

For a period ``t`` and lag ``l`` the pre-treatment contrast compares observed
switchers at ``t`` with not-yet-treated groups on the outcome change from
``t-l`` to ``t-1`` (``kind="mc"``, sensitive to early treatment onset) or from
``t-l`` to ``t-2`` (``kind="pt"``, a pure pre-trend check). The contrasts are
combined into a sum-of-squares or a max statistic, with critical values from
the recentered group bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Literal

import numpy as np

from ._parallel import pmap, stream
from .errors import BootstrapError, EstimationError
from .inference import BootstrapConfig, resample_indices
from .panel import Panel, require_valid, restrict_to_cohort

Kind = Literal["mc", "pt"]
StatKind = Literal["sum", "max"]


@dataclass(frozen=True)
class Window:
    """Restricts the lags used: ``min_lag <= l <= max_lag``.

    ``drop_degenerate`` removes the ``l = 2`` moments of the trend test,
    which are identically zero.
    """

    max_lag: int | None = None
    min_lag: int | None = None
    drop_degenerate: bool = False


def index_set(T: int, kind: Kind = "mc", window: Window | None = None) -> list[tuple[int, int]]:
    """Admissible ``(t, l)`` pairs: ``l`` in ``2..T-1`` and ``t`` in ``l+1..T``, ordered by lag then period."""
    window = window or Window()
    lo = max(2, window.min_lag or 2)
    if kind == "pt" and window.drop_degenerate:
        lo = max(lo, 3)
    hi = T - 1 if window.max_lag is None else min(T - 1, window.max_lag)
    return [(t, l) for l in range(lo, hi + 1) for t in range(l + 1, T + 1)]


@dataclass
class TauGrid:
    kind: Kind
    index_set: list[tuple[int, int]]
    values: np.ndarray
    defined: np.ndarray
    g: int

    @property
    def entries(self) -> dict[tuple[int, int], dict]:
        return {
            tl: {"value": float(v), "defined": bool(ok)}
            for tl, v, ok in zip(self.index_set, self.values, self.defined)
        }


def _tau_arrays(n: np.ndarray, y: np.ndarray, d: np.ndarray, kind: Kind, index: list[tuple[int, int]]):
    """Contrasts for every ``(t, l)`` in ``index``; arrays are ``(G, T)``."""
    t = np.array([tl[0] for tl in index])
    l = np.array([tl[1] for tl in index])
    dt = np.ascontiguousarray(d.T)
    yt = np.ascontiguousarray(y.T)
    nt = np.ascontiguousarray(n.T)
    # 0-based rows: period p lives at row p - 1
    prev, cur = dt[t - 2], dt[t - 1]
    sw = (prev == 0) & (cur == 1)
    cmp = (prev == 0) & (cur == 0)
    end = t - 2 if kind == "mc" else t - 3
    x = yt[end] - yt[t - l - 1]
    w = nt[t - 1]
    wt = np.where(sw, w, 0.0)
    wc = np.where(cmp, w, 0.0)
    st, sc = wt.sum(axis=1), wc.sum(axis=1)
    defined = (st > 0) & (sc > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = (wt * x).sum(axis=1) / st - (wc * x).sum(axis=1) / sc
    return np.where(defined, val, 0.0), defined


def _check_kind(kind: str) -> None:
    if kind not in ("mc", "pt"):
        raise ValueError(f"unknown test kind {kind!r}")


def _tau(panel: Panel, t: int, l: int, kind: Kind) -> float:
    if not (2 <= l <= panel.T - 1 and l + 1 <= t <= panel.T):
        raise ValueError(f"index ({t},{l}) outside C_S")
    require_valid(panel)
    val, _ = _tau_arrays(panel.n, panel.y, panel.d, kind, [(t, l)])
    return float(val[0])


def tau_10(panel: Panel, t: int, l: int) -> float:
    """Switchers vs not-yet-treated on ``Y[t-1] - Y[t-l]``."""
    return _tau(panel, t, l, "mc")


def tau_00(panel: Panel, t: int, l: int) -> float:
    """Switchers vs not-yet-treated on ``Y[t-2] - Y[t-l]``."""
    return _tau(panel, t, l, "pt")


def tau_grid(panel: Panel, kind: Kind, window: Window | None = None) -> TauGrid:
    _check_kind(kind)
    require_valid(panel)
    if panel.T < 3:
        raise EstimationError("pre-treatment tests need T >= 3")
    index = index_set(panel.T, kind, window)
    if not index:
        raise EstimationError("empty index set")
    vals, ok = _tau_arrays(panel.n, panel.y, panel.d, kind, index)
    return TauGrid(kind, index, vals, ok, panel.G)


def _stat_values(values: np.ndarray, defined: np.ndarray, g: int) -> tuple[float, float]:
    z = np.sqrt(g) * values[defined]
    if z.size == 0:
        return 0.0, 0.0
    return float((z * z).sum()), float(np.abs(z).max())


def t_sum(grid: TauGrid) -> float:
    return _stat_values(grid.values, grid.defined, grid.g)[0]


def t_max(grid: TauGrid) -> float:
    return _stat_values(grid.values, grid.defined, grid.g)[1]


def statistic(grid: TauGrid, statistic_kind: StatKind) -> float:
    if statistic_kind == "sum":
        return t_sum(grid)
    if statistic_kind == "max":
        return t_max(grid)
    raise ValueError(f"unknown statistic {statistic_kind!r}")


def recentered_draw(panel: Panel, grid: TauGrid, rows: np.ndarray) -> tuple[float, float]:
    """Sum and max statistics of ``tau_b - tau`` on the resample given by ``rows``.

    Entries undefined on either sample are left out. Returns NaNs when no
    entry survives.
    """
    vals, ok = _tau_arrays(panel.n[rows], panel.y[rows], panel.d[rows], grid.kind, grid.index_set)
    use = ok & grid.defined
    if not use.any():
        return float("nan"), float("nan")
    return _stat_values(vals - grid.values, use, grid.g)


def _draw(j: int, panel: Panel, grid: TauGrid, seed: int) -> tuple[float, float]:
    return recentered_draw(panel, grid, resample_indices(panel.G, stream(seed, j)))


def bootstrap_distribution(panel: Panel, grid: TauGrid, cfg: BootstrapConfig) -> np.ndarray:
    """``(b, 2)`` array of recentered (sum, max) statistics; NaN rows are skipped draws."""
    out = pmap(partial(_draw, panel=panel, grid=grid, seed=cfg.seed), range(cfg.b), workers=cfg.threads)
    return np.array(out, dtype=float).reshape(cfg.b, 2)


def critical_value(draws: np.ndarray, level: float) -> float:
    """``(1 - level)`` quantile; ties resolved towards the higher order statistic."""
    return float(np.quantile(draws, 1.0 - level, method="higher"))


@dataclass
class TestOutcome:
    statistic_kind: StatKind
    value: float
    critical_value: float
    level: float
    reject: bool
    b_used: int
    pvalue: float
    kind: Kind = "mc"
    skipped: int = 0
    grid: TauGrid | None = field(default=None, repr=False)

    __test__ = False  # keep pytest from collecting this class


def _outcome(grid: TauGrid, boot: np.ndarray, statistic_kind: StatKind, level: float) -> TestOutcome:
    col = 0 if statistic_kind == "sum" else 1
    draws = boot[:, col]
    good = draws[np.isfinite(draws)]
    if good.size == 0:
        raise BootstrapError("bootstrap degenerate: no usable draw")
    value = statistic(grid, statistic_kind)
    cv = critical_value(good, level)
    return TestOutcome(
        statistic_kind=statistic_kind,
        value=value,
        critical_value=cv,
        level=level,
        reject=bool(value > cv),
        b_used=int(good.size),
        pvalue=float(np.mean(good >= value)),
        kind=grid.kind,
        skipped=int(draws.size - good.size),
        grid=grid,
    )


def bootstrap_test(
    panel: Panel,
    kind: Kind,
    statistic_kind: StatKind,
    level: float,
    cfg: BootstrapConfig,
    window: Window | None = None,
) -> TestOutcome:
    """Test that every pre-treatment contrast of ``kind`` is zero at size ``level``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    grid = tau_grid(panel, kind, window)
    boot = bootstrap_distribution(panel, grid, cfg)
    return _outcome(grid, boot, statistic_kind, level)


@dataclass
class Verdict:
    """``TV``: pre-trends violated; ``PTN``: trends hold, no early onset; ``PTM``: trends hold, early onset."""

    outcome: Literal["TV", "PTN", "PTM"]
    pt_test: TestOutcome
    mc_test: TestOutcome | None
    alpha: float
    gamma: float


def decision_rule(
    panel: Panel,
    alpha: float,
    gamma: float,
    cfg: BootstrapConfig,
    window: Window | None = None,
    statistic_kind: StatKind = "sum",
) -> Verdict:
    """Two-step rule: trend test at ``alpha``; only if it passes, misclassification test at ``gamma``."""
    pt = bootstrap_test(panel, "pt", statistic_kind, alpha, cfg, window)
    if pt.reject:
        return Verdict("TV", pt, None, alpha, gamma)
    mc = bootstrap_test(panel, "mc", statistic_kind, gamma, cfg, window)
    return Verdict("PTM" if mc.reject else "PTN", pt, mc, alpha, gamma)


def cohort_test(
    panel: Panel,
    cohort_t: int,
    kind: Kind,
    statistic_kind: StatKind,
    level: float,
    cfg: BootstrapConfig,
    comparison: str = "never_treated",
    window: Window | None = None,
) -> TestOutcome:
    """:func:`bootstrap_test` on one adoption cohort and its comparison groups."""
    return bootstrap_test(restrict_to_cohort(panel, cohort_t, comparison), kind, statistic_kind, level, cfg, window)
