"""DID estimators robust to one-period-early true treatment onset.

Three estimators share a set of per-period two-group contrasts:

* ``did``        -- the switcher-weighted average of period-by-period DIDs,
* ``did_s``      -- ``did`` plus a backward-looking and a forward-looking
  correction, targeting the effect in observed switching cells,
* ``did_s_star`` -- a mixture of ``did_s`` and a contrast against already
  treated groups, targeting the effect at the true switch date.

All per-period quantities are vectors over ``t = 2..T``; index ``k`` holds
period ``t = k + 2``. A contrast whose treated or comparison set is empty is
set to zero and its ``present`` flag is False.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import EstimationError
from .panel import CellCounts, Panel, cell_counts, require_valid, transition_masks

#: cell budget below which :func:`twfe` solves the dummy-variable system exactly
TWFE_EXACT_MAX_CELLS = 20_000
TWFE_DEMEAN_TOL = 1e-10


def _contrast(treat: np.ndarray, ctrl: np.ndarray, w: np.ndarray, x: np.ndarray):
    """Per-row weighted mean of ``x`` over ``treat`` minus that over ``ctrl``.

    All inputs are ``(K, G)``. Returns ``(values, present)``.
    """
    wt = np.where(treat, w, 0.0)
    wc = np.where(ctrl, w, 0.0)
    st = wt.sum(axis=1)
    sc = wc.sum(axis=1)
    present = (st > 0) & (sc > 0)
    xt = np.where(treat, x, 0.0)
    xc = np.where(ctrl, x, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = (wt * xt).sum(axis=1) / st - (wc * xc).sum(axis=1) / sc
    return np.where(present, val, 0.0), present


@dataclass(frozen=True, eq=False)
class DidComponents:
    """Per-period building blocks of the three estimators.

    ``did_dstar_tm1`` is ``did_dstar`` shifted one period back (zero at
    ``t = 2``), so every array lines up on the period ``t`` whose observed
    switchers it concerns. ``did_s`` and ``did_sdagger_tm1`` are unscaled
    (multiplied by cell counts), as they enter the estimators.
    """

    periods: np.ndarray
    did: np.ndarray
    did_star: np.ndarray
    did_dstar: np.ndarray
    did_dstar_tm1: np.ndarray
    did_tstar_tm1: np.ndarray
    did_s: np.ndarray
    did_sdagger_tm1: np.ndarray
    lambda_tm1: np.ndarray
    present: dict[str, np.ndarray]
    counts: CellCounts

    def at(self, t: int) -> dict[str, float]:
        k = t - 2
        names = ("did", "did_star", "did_dstar", "did_dstar_tm1", "did_tstar_tm1", "did_s", "did_sdagger_tm1", "lambda_tm1")
        return {name: float(getattr(self, name)[k]) for name in names}


@dataclass
class EstimateResult:
    estimator: str
    point: float
    components: DidComponents | None = None
    n_s: float | None = None
    n_s_star_hat: float | None = None
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    p_value_ate_zero: float | None = None
    flags: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)


def lambda_from_components(dstar: float, tstar: float) -> tuple[float, list[str]]:
    """Share of early true switchers implied by the forward and already-treated contrasts.

    Returns 0 when both inputs are zero. When they cancel exactly the ratio
    is undefined; 0 is returned with a ``lambda_undefined`` flag.
    """
    flags = []
    denom = dstar + tstar
    if dstar == 0.0 and tstar == 0.0:
        return 0.0, flags
    if denom == 0.0:
        return 0.0, ["lambda_undefined"]
    lam = dstar / denom
    if not 0.0 <= lam <= 1.0:
        flags.append("lambda_out_of_range")
    return lam, flags


def components(panel: Panel, counts: CellCounts | None = None) -> DidComponents:
    """Compute every per-period contrast of the estimator family in one pass."""
    require_valid(panel)
    counts = counts if counts is not None else cell_counts(panel)
    T, G = panel.T, panel.G
    K = T - 1
    m = transition_masks(panel.d)
    nt = np.ascontiguousarray(panel.n.T)
    yt = np.ascontiguousarray(panel.y.T)
    n_t, n_tm1 = nt[1:], nt[:-1]
    dy = yt[1:] - yt[:-1]  # row k: Y_t - Y_{t-1}
    dy_lag = np.vstack([np.zeros((1, G)), dy[:-1]])  # row k: Y_{t-1} - Y_{t-2}

    did, p_did = _contrast(m["sw"], m["cmp"], n_t, dy)
    star, p_star = _contrast(m["sw"], m["cmp"], n_t, dy_lag)
    star[0], p_star[0] = 0.0, False
    dstar, p_dstar = _contrast(m["sw_next"], m["cmp_next"], n_t, dy)
    dstar[-1], p_dstar[-1] = 0.0, False
    tstar, p_tstar = _contrast(m["sw"], m["stay"], n_tm1, dy)
    dstar_tm1 = np.concatenate([[0.0], dstar[:-1]])
    p_dstar_tm1 = np.concatenate([[False], p_dstar[:-1]])

    n10, n00 = counts.n_10, counts.n_00
    with np.errstate(invalid="ignore", divide="ignore"):
        fwd_weight = np.where(n00 > 0, counts.n1_10 * n10 / n00, 0.0)
    did_s = n10 * did + n10 * star + fwd_weight * dstar
    did_sdagger = counts.n1_10_tm1 * (dstar_tm1 + tstar)

    lam = np.zeros(K)
    p_lam = np.ones(K, dtype=bool)
    for k in range(K):
        lam[k], fl = lambda_from_components(float(dstar_tm1[k]), float(tstar[k]))
        p_lam[k] = "lambda_undefined" not in fl

    return DidComponents(
        periods=np.arange(2, T + 1),
        did=did,
        did_star=star,
        did_dstar=dstar,
        did_dstar_tm1=dstar_tm1,
        did_tstar_tm1=tstar,
        did_s=did_s,
        did_sdagger_tm1=did_sdagger,
        lambda_tm1=lam,
        present={
            "did": p_did,
            "did_star": p_star,
            "did_dstar": p_dstar,
            "did_dstar_tm1": p_dstar_tm1,
            "did_tstar_tm1": p_tstar,
            "lambda_tm1": p_lam,
        },
        counts=counts,
    )


def _check_t(panel: Panel, t: int) -> int:
    if not 2 <= t <= panel.T:
        raise ValueError(f"period {t} outside 2..{panel.T}")
    return t - 2


def did_t(panel: Panel, counts: CellCounts | None, t: int) -> float:
    """Switchers-vs-not-yet-treated DID for the change from ``t-1`` to ``t``."""
    k = _check_t(panel, t)
    return float(components(panel, counts).did[k])


def did_star_t(panel: Panel, counts: CellCounts | None, t: int) -> float:
    """Backward correction: the same contrast on the ``t-2 -> t-1`` change."""
    k = _check_t(panel, t)
    return float(components(panel, counts).did_star[k])


def did_dstar_t(panel: Panel, counts: CellCounts | None, t: int) -> float:
    """Forward correction: groups switching at ``t+1`` vs still untreated, ``t-1 -> t``."""
    k = _check_t(panel, t)
    return float(components(panel, counts).did_dstar[k])


def did_tstar_tm1(panel: Panel, counts: CellCounts | None, t: int) -> float:
    """Switchers at ``t`` vs groups already treated at ``t-1``, ``t-1 -> t``, weights ``N[t-1]``."""
    k = _check_t(panel, t)
    return float(components(panel, counts).did_tstar_tm1[k])


def lambda_hat(panel: Panel, t: int) -> float:
    """Estimated share of period-``t`` observed switchers whose true switch was ``t-1``."""
    k = _check_t(panel, t)
    return float(components(panel).lambda_tm1[k])


def _n_s(comp: DidComponents) -> float:
    n_s = comp.counts.n_s
    if n_s <= 0:
        raise EstimationError("no observed switchers")
    return n_s


def _zero_flags(comp: DidComponents) -> list[str]:
    flags = []
    active = comp.counts.n_10 > 0
    for name in ("did", "did_star", "did_dstar"):
        absent = comp.periods[active & ~comp.present[name]]
        # the boundary conventions are structural, not worth flagging
        if name == "did_star":
            absent = absent[absent != 2]
        if name == "did_dstar":
            absent = absent[absent != comp.periods[-1]]
        if absent.size:
            flags.append(f"zero_convention:{name}:t=" + ",".join(str(int(t)) for t in absent))
    return flags


def did(panel: Panel) -> EstimateResult:
    comp = components(panel)
    n_s = _n_s(comp)
    point = float((comp.counts.n_10 * comp.did).sum() / n_s)
    return EstimateResult("did", point, comp, n_s=n_s, flags=_zero_flags(comp))


def did_s(panel: Panel) -> EstimateResult:
    comp = components(panel)
    n_s = _n_s(comp)
    point = float(comp.did_s.sum() / n_s)
    return EstimateResult("did_s", point, comp, n_s=n_s, flags=_zero_flags(comp))


def did_s_star(panel: Panel, trim_threshold: float | None = None, clamp_lambda: bool = False) -> EstimateResult:
    """Estimate the effect at the true switch date.

    Parameters
    ----------
    trim_threshold : float, optional
        Keep period ``t`` only when the absolute sum of the forward and
        already-treated contrasts at ``t-1`` exceeds this value. ``None`` or
        ``0`` disables trimming. Dropped periods leave both numerator and
        switcher mass.
    clamp_lambda : bool
        Clip the estimated shares to ``[0, 1]`` before mixing.
    """
    comp = components(panel)
    n_s = _n_s(comp)
    c = comp.counts
    lam = comp.lambda_tm1
    flags = _zero_flags(comp)

    active = (c.n_10 > 0) | (c.n1_10_tm1 > 0)
    out = active & ((lam < 0) | (lam > 1))
    if out.any():
        flags.append("lambda_out_of_range:t=" + ",".join(str(int(t)) for t in comp.periods[out]))
    undefined = active & ~comp.present["lambda_tm1"]
    if undefined.any():
        flags.append("lambda_undefined:t=" + ",".join(str(int(t)) for t in comp.periods[undefined]))
    if clamp_lambda:
        lam = np.clip(lam, 0.0, 1.0)
        if out.any():
            flags.append("lambda_clamped")

    keep = np.ones_like(lam, dtype=bool)
    if trim_threshold:
        keep = np.abs(comp.did_dstar_tm1 + comp.did_tstar_tm1) > trim_threshold
        dropped = comp.periods[active & ~keep]
        if dropped.size:
            flags.append("trimmed:t=" + ",".join(str(int(t)) for t in dropped))

    mass = np.where(keep, lam * c.n1_10_tm1 + (1.0 - lam) * c.n_10, 0.0)
    n_hat = float(mass.sum())
    if not n_hat > 0:
        raise EstimationError("degenerate switcher mass")
    num = np.where(keep, lam * comp.did_sdagger_tm1 + (1.0 - lam) * comp.did_s, 0.0)
    point = float(num.sum() / n_hat)
    res = EstimateResult("did_s_star", point, comp, n_s=n_s, n_s_star_hat=n_hat, flags=flags)
    res.extra["lambda_used"] = lam.tolist()
    return res


# --------------------------------------------------------------------------
# two-way fixed effects

def _two_way_residual_exact(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted residual of ``x`` on group and period dummies via the normal equations.

    Group effects are eliminated analytically (their block is diagonal), which
    leaves a ``T x T`` Schur-complement system for the period effects.
    """
    wg = w.sum(axis=1)  # (G,)
    wt = w.sum(axis=0)  # (T,)
    xg = (w * x).sum(axis=1)
    xt = (w * x).sum(axis=0)
    # period effects, last one normalised to zero
    S = np.diag(wt) - (w.T / wg) @ w
    rhs = xt - w.T @ (xg / wg)
    gamma = np.zeros(x.shape[1])
    gamma[:-1] = np.linalg.solve(S[:-1, :-1], rhs[:-1])
    alpha = (xg - w @ gamma) / wg
    return x - alpha[:, None] - gamma[None, :]


def _two_way_residual_demean(x: np.ndarray, w: np.ndarray, tol: float = TWFE_DEMEAN_TOL, max_iter: int = 100_000) -> np.ndarray:
    r = x.astype(float).copy()
    wg = w.sum(axis=1)
    wt = w.sum(axis=0)
    scale = max(np.abs(x).max(), 1.0)
    for _ in range(max_iter):
        r -= ((w * r).sum(axis=1) / wg)[:, None]
        shift = (w * r).sum(axis=0) / wt
        r -= shift[None, :]
        if np.abs(shift).max() < tol * scale:
            return r
    raise EstimationError("two-way demeaning did not converge")


def two_way_residual(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Residual of ``x`` from a weighted regression on group and period indicators."""
    if x.size <= TWFE_EXACT_MAX_CELLS:
        return _two_way_residual_exact(x, w)
    return _two_way_residual_demean(x, w)


def twfe(panel: Panel) -> float:
    """Cell-size weighted TWFE coefficient on observed treatment."""
    require_valid(panel)
    w = panel.n
    d = panel.d.astype(float)
    eps = two_way_residual(d, w)
    denom = float((w * eps * d).sum())
    if float((w * eps * eps).sum()) <= 1e-12 * max(float((w * d * d).sum()), 1.0):
        raise EstimationError("no identifying variation")
    return float((w * eps * panel.y).sum() / denom)


def twfe_misclassification_ratio(panel: Panel) -> float:
    """Attenuation factor of TWFE under a homogeneous effect, from latent treatment.

    Ratio of the residual-weighted latent treatment share to the
    residual-weighted observed treatment; TWFE converges to the effect times
    this factor. Needs ``d_true``.
    """
    if panel.d_true is None:
        raise EstimationError("latent treatment (d_true) required")
    w = panel.n
    d = panel.d.astype(float)
    eps = two_way_residual(d, w)
    return float((w * eps * panel.d_true).sum() / (w * eps * d).sum())


# --------------------------------------------------------------------------
# stacked moment vector

V_FIELDS = (
    "P_10", "P_00", "P1_10_tm1", "P1_00_tm1", "P1_11_tm1",
    "Q_10", "Q_00", "Qs_10", "Qs_00", "Qss_10", "Qss_00", "Qsss_10_tm1", "Qsss_11_tm1",
)


@dataclass(frozen=True, eq=False)
class VVector:
    """Per-period 13-tuples of group-averaged cell sums (row ``k`` is ``t = k + 2``)."""

    values: np.ndarray  # (T-1, 13)
    G: int

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[:, V_FIELDS.index(name)]

    @property
    def periods(self) -> np.ndarray:
        return np.arange(2, self.values.shape[0] + 2)

    def flat(self) -> np.ndarray:
        return self.values.ravel()


def assemble_v(panel: Panel) -> VVector:
    require_valid(panel)
    G = panel.G
    m = transition_masks(panel.d)
    nt = np.ascontiguousarray(panel.n.T)
    yt = np.ascontiguousarray(panel.y.T)
    n_t, n_tm1 = nt[1:], nt[:-1]
    dy = yt[1:] - yt[:-1]
    dy_lag = np.vstack([np.zeros((1, G)), dy[:-1]])

    def s(mask, w, x=None):
        v = np.where(mask, w if x is None else w * x, 0.0)
        return v.sum(axis=1) / G

    cols = {
        "P_10": s(m["sw"], n_t),
        "P_00": s(m["cmp"], n_t),
        "P1_10_tm1": s(m["sw"], n_tm1),
        "P1_00_tm1": s(m["cmp"], n_tm1),
        "P1_11_tm1": s(m["stay"], n_tm1),
        "Q_10": s(m["sw"], n_t, dy),
        "Q_00": s(m["cmp"], n_t, dy),
        "Qs_10": s(m["sw"], n_t, dy_lag),
        "Qs_00": s(m["cmp"], n_t, dy_lag),
        "Qss_10": s(m["sw_next"], n_t, dy),
        "Qss_00": s(m["cmp_next"], n_t, dy),
        "Qsss_10_tm1": s(m["sw"], n_tm1, dy),
        "Qsss_11_tm1": s(m["stay"], n_tm1, dy),
    }
    cols["Qs_10"][0] = cols["Qs_00"][0] = 0.0
    cols["Qss_10"][-1] = cols["Qss_00"][-1] = 0.0
    return VVector(np.column_stack([cols[f] for f in V_FIELDS]), G)


def f_of_v(v: VVector, strict: bool = False) -> float:
    """Evaluate the true-switcher estimator as a smooth function of the moment vector.

    Each contrast enters as ``q1 - (p1 / p0) * q0`` (a count times a DID).
    With ``strict=False`` a contrast with an empty side is zero, the same
    convention as the direct estimator, so the result equals
    ``did_s_star(panel).point``. With ``strict=True`` a zero denominator
    under a nonzero numerator raises instead.
    """
    K = v.values.shape[0]

    def pair(q1, p1, q0, p0):
        # returns (q1 - p1/p0*q0, q1/p1 - q0/p0)
        if p1 == 0 or p0 == 0:
            if strict and p0 == 0 and p1 != 0:
                raise EstimationError("undefined f(V) component")
            return 0.0, 0.0
        return q1 - p1 / p0 * q0, q1 / p1 - q0 / p0

    # P^[1]_{.,t} sits in the row of period t+1, where it is indexed as "t-1"
    P1_10_at = np.append(v["P1_10_tm1"][1:], 0.0)
    P1_00_at = np.append(v["P1_00_tm1"][1:], 0.0)

    num = 0.0
    den = 0.0
    for k in range(K):
        P10, P00 = v["P_10"][k], v["P_00"][k]
        P1_10, P1_00, P1_11 = v["P1_10_tm1"][k], v["P1_00_tm1"][k], v["P1_11_tm1"][k]
        if k == 0:
            fwd_prev, fwd_prev_rate = 0.0, 0.0
        else:
            fwd_prev, fwd_prev_rate = pair(v["Qss_10"][k - 1], P1_10, v["Qss_00"][k - 1], P1_00)
        treated, treated_rate = pair(v["Qsss_10_tm1"][k], P1_10, v["Qsss_11_tm1"][k], P1_11)
        base, _ = pair(v["Q_10"][k], P10, v["Q_00"][k], P00)
        back, _ = pair(v["Qs_10"][k], P10, v["Qs_00"][k], P00)
        fwd, _ = pair(v["Qss_10"][k], P1_10_at[k], v["Qss_00"][k], P1_00_at[k])
        if P00 != 0:
            fwd *= P10 / P00
        elif strict and P10 != 0 and fwd != 0:
            raise EstimationError("undefined f(V) component")
        else:
            fwd = 0.0

        g_t, _ = lambda_from_components(fwd_prev_rate, treated_rate)
        num += g_t * (fwd_prev + treated) + (1.0 - g_t) * (base + back + fwd)
        den += g_t * P1_10 + (1.0 - g_t) * P10
    if not den > 0:
        raise EstimationError("undefined f(V) component")
    return float(num * (1.0 / den))


ESTIMATORS = {
    "did": did,
    "did_s": did_s,
    "did_s_star": did_s_star,
}


def estimate(panel: Panel, estimator: str, **options) -> EstimateResult:
    """Dispatch to an estimator by name; ``twfe`` is wrapped into an :class:`EstimateResult`."""
    if estimator == "twfe":
        return EstimateResult("twfe", twfe(panel))
    try:
        fn = ESTIMATORS[estimator]
    except KeyError:
        raise ValueError(f"unknown estimator {estimator!r}") from None
    return fn(panel, **options)
