"""Group-period panel data model, staggered-design checks and file ingestion.

A panel stores one row per group and one column per period. Cell sizes
``n``, outcome means ``y`` and observed treatment ``d`` are always present;
``d_true``, ``s_true`` and ``effect`` hold latent truth and only exist for
simulated data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Hashable, Iterable, Literal, Sequence

import numpy as np
import pandas as pd

from .errors import PanelError

Comparison = Literal["never_treated", "not_yet_treated"]

_LATENT = ("d_true", "s_true", "effect")


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GroupSeries:
    """Time series of one group: cell sizes, outcome means, observed treatment.

    ``d_true`` and ``s_true`` are latent fractions of units actually treated
    and actually switching in each cell; ``effect`` is the cell-average
    treatment effect Y(1) - Y(0). All three are optional and simulation-only.
    """

    group_id: Hashable
    n: np.ndarray
    y: np.ndarray
    d: np.ndarray
    d_true: np.ndarray | None = None
    s_true: np.ndarray | None = None
    effect: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "n", _frozen(self.n, float))
        object.__setattr__(self, "y", _frozen(self.y, float))
        object.__setattr__(self, "d", _frozen(self.d, np.int8))
        for name in _LATENT:
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val, float))

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True, eq=False)
class Panel:
    """Immutable balanced panel of ``G`` groups over ``T`` periods.

    Arrays are ``(G, T)``; column ``j`` holds period ``j + 1``. Construction
    only enforces what the array layout needs (rectangular shape, at least two
    groups and periods, unique ids, binary ``d``). Substantive assumptions
    are checked by :func:`validate`.
    """

    group_ids: tuple
    n: np.ndarray
    y: np.ndarray
    d: np.ndarray
    d_true: np.ndarray | None = None
    s_true: np.ndarray | None = None
    effect: np.ndarray | None = None

    def __post_init__(self):
        ids = tuple(self.group_ids)
        object.__setattr__(self, "group_ids", ids)
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 2:
            raise PanelError("panel arrays must be two-dimensional (groups x periods)")
        shape = y.shape
        d = np.asarray(self.d)
        if d.size and not np.isin(d, (0, 1)).all():
            raise PanelError("non-binary treatment")
        object.__setattr__(self, "y", _frozen(y, float))
        object.__setattr__(self, "n", _frozen(self.n, float))
        object.__setattr__(self, "d", _frozen(d, np.int8))
        for name in _LATENT:
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val, float))
        for name in ("n", "d", *_LATENT):
            val = getattr(self, name)
            if val is not None and val.shape != shape:
                raise PanelError(f"length mismatch: '{name}' has shape {val.shape}, expected {shape}")
        if shape[0] < 2:
            raise PanelError("a panel needs at least 2 groups")
        if shape[1] < 2:
            raise PanelError("a panel needs at least 2 periods")
        if len(ids) != shape[0]:
            raise PanelError(f"{len(ids)} group ids for {shape[0]} groups")
        if len(set(ids)) != len(ids):
            raise PanelError("group ids must be unique")

    @classmethod
    def from_groups(cls, groups: Iterable[GroupSeries]) -> "Panel":
        groups = list(groups)
        if not groups:
            raise PanelError("a panel needs at least 2 groups")
        lengths = {len(g.y) for g in groups} | {len(g.n) for g in groups} | {len(g.d) for g in groups}
        if len(lengths) != 1:
            raise PanelError(f"length mismatch: series lengths {sorted(lengths)}")
        kw = {}
        for name in _LATENT:
            present = [getattr(g, name) is not None for g in groups]
            if all(present):
                kw[name] = np.vstack([getattr(g, name) for g in groups])
            elif any(present):
                raise PanelError(f"latent field '{name}' given for some groups only")
        return cls(
            group_ids=tuple(g.group_id for g in groups),
            n=np.vstack([g.n for g in groups]),
            y=np.vstack([g.y for g in groups]),
            d=np.vstack([g.d for g in groups]),
            **kw,
        )

    @property
    def G(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def has_truth(self) -> bool:
        return self.d_true is not None and self.s_true is not None

    @property
    def groups(self) -> list[GroupSeries]:
        out = []
        for i, gid in enumerate(self.group_ids):
            latent = {k: (None if getattr(self, k) is None else getattr(self, k)[i]) for k in _LATENT}
            out.append(GroupSeries(gid, self.n[i], self.y[i], self.d[i], **latent))
        return out

    def take(self, rows: Sequence[int], group_ids: Sequence | None = None) -> "Panel":
        """Sub-panel (or resample, rows may repeat) of the given group rows."""
        rows = np.asarray(rows, dtype=np.intp)
        if group_ids is None:
            group_ids = tuple(self.group_ids[i] for i in rows)
        kw = {k: (None if getattr(self, k) is None else getattr(self, k)[rows]) for k in _LATENT}
        return Panel(tuple(group_ids), self.n[rows], self.y[rows], self.d[rows], **kw)

    def with_outcome(self, y) -> "Panel":
        kw = {k: getattr(self, k) for k in _LATENT}
        return Panel(self.group_ids, self.n, y, self.d, **kw)

    @cached_property
    def first_treated(self) -> np.ndarray:
        """First observed treatment period (1-based) per group, 0 if never treated."""
        ever = self.d.any(axis=1)
        return np.where(ever, self.d.argmax(axis=1) + 1, 0)

    @cached_property
    def report(self) -> "ValidationReport":
        return validate(self)


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    cohort_table: dict[Any, int | None] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_for_errors(self) -> None:
        if self.errors:
            raise PanelError("; ".join(self.errors))


def validate(panel: Panel | Iterable[GroupSeries]) -> ValidationReport:
    """Check the staggered-design assumptions.

    Hard errors: non-positive cell sizes, non-monotone observed treatment,
    inconsistent series lengths. Warnings: switching cells without a
    not-yet-treated comparison group, and switches between periods 1 and 2.
    """
    rep = ValidationReport()
    if not isinstance(panel, Panel):
        groups = list(panel)
        lengths = sorted({len(g.y) for g in groups} | {len(g.n) for g in groups} | {len(g.d) for g in groups})
        if len(lengths) > 1:
            rep.errors.append(f"length mismatch: series lengths {lengths}")
            return rep
        try:
            panel = Panel.from_groups(groups)
        except PanelError as exc:
            rep.errors.append(str(exc))
            return rep

    ids = panel.group_ids
    n, d = panel.n, panel.d
    for i in np.flatnonzero((n <= 0).any(axis=1) | ~np.isfinite(n).all(axis=1)):
        rep.errors.append(f"group {ids[i]}: non-positive cell size (balanced panel required)")
    for i in np.flatnonzero((np.diff(d, axis=1) < 0).any(axis=1)):
        rep.errors.append(f"group {ids[i]}: non-monotone treatment")
    for i in np.flatnonzero(~np.isfinite(panel.y).all(axis=1)):
        rep.errors.append(f"group {ids[i]}: non-finite outcome")

    prev, cur = d[:, :-1], d[:, 1:]
    switch = (prev == 0) & (cur == 1)
    has_cmp = ((prev == 0) & (cur == 0)).any(axis=0)
    for k in np.flatnonzero(switch.any(axis=0) & ~has_cmp):
        t = k + 2
        for i in np.flatnonzero(switch[:, k]):
            rep.warnings.append(f"group {ids[i]}: no comparison group at t={t}")
    for i in np.flatnonzero(d[:, 1] > d[:, 0]):
        rep.warnings.append(f"group {ids[i]}: observed switch between periods 1 and 2")

    first = panel.first_treated
    rep.cohort_table = {gid: (int(first[i]) if first[i] else None) for i, gid in enumerate(ids)}
    return rep


def _clean(panel: Panel) -> bool:
    n = panel.n
    return bool(
        (n > 0).all()
        and np.isfinite(n).all()
        and np.isfinite(panel.y).all()
        and (np.diff(panel.d, axis=1) >= 0).all()
    )


def require_valid(panel: Panel) -> Panel:
    """Raise :class:`PanelError` when :func:`validate` reports hard errors."""
    if not _clean(panel):
        panel.report.raise_for_errors()
    return panel


def drop_initial_switchers(panel: Panel) -> Panel:
    """Remove groups observed to switch between periods 1 and 2."""
    keep = np.flatnonzero(~(panel.d[:, 1] > panel.d[:, 0]))
    return panel.take(keep)


@dataclass(frozen=True, eq=False)
class CellCounts:
    """Cell-size aggregates for periods ``t = 2..T`` (index ``k`` is ``t = k + 2``).

    ``n1_10`` and ``n1_00`` are forward-looking: they sum ``N[g, t]`` over
    groups with ``(D[t+1], D[t]) = (1, 0)`` resp. ``(0, 0)`` and vanish at
    ``t = T``. The ``*_tm1`` arrays sum ``N[g, t-1]`` over groups selected
    by ``(D[t], D[t-1])``.
    """

    periods: np.ndarray
    n_10: np.ndarray
    n_00: np.ndarray
    n1_10: np.ndarray
    n1_00: np.ndarray
    n1_10_tm1: np.ndarray
    n1_00_tm1: np.ndarray
    n1_11_tm1: np.ndarray

    @property
    def n_s(self) -> float:
        return float(self.n_10.sum())

    def at(self, t: int) -> dict[str, float]:
        k = t - 2
        return {
            name: float(getattr(self, name)[k])
            for name in ("n_10", "n_00", "n1_10", "n1_00", "n1_10_tm1", "n1_00_tm1", "n1_11_tm1")
        }


def transition_masks(d: np.ndarray) -> dict[str, np.ndarray]:
    """Boolean ``(T-1, G)`` masks of observed transitions ending in period t."""
    dt = np.ascontiguousarray(d.T)
    prev, cur = dt[:-1], dt[1:]
    sw = (prev == 0) & (cur == 1)
    cmp = (prev == 0) & (cur == 0)
    stay = (prev == 1) & (cur == 1)
    false_row = np.zeros((1, d.shape[0]), dtype=bool)
    return {
        "sw": sw,
        "cmp": cmp,
        "stay": stay,
        # groups switching at t+1 / staying untreated at t+1, aligned on t
        "sw_next": np.vstack([sw[1:], false_row]),
        "cmp_next": np.vstack([cmp[1:], false_row]),
    }


def _masked_sum(mask: np.ndarray, w: np.ndarray) -> np.ndarray:
    # rows are periods; reduction runs over the contiguous group axis (pairwise)
    return np.where(mask, w, 0.0).sum(axis=1)


def cell_counts(panel: Panel) -> CellCounts:
    require_valid(panel)
    m = transition_masks(panel.d)
    nt = np.ascontiguousarray(panel.n.T)
    n_t, n_tm1 = nt[1:], nt[:-1]
    return CellCounts(
        periods=np.arange(2, panel.T + 1),
        n_10=_masked_sum(m["sw"], n_t),
        n_00=_masked_sum(m["cmp"], n_t),
        n1_10=_masked_sum(m["sw_next"], n_t),
        n1_00=_masked_sum(m["cmp_next"], n_t),
        n1_10_tm1=_masked_sum(m["sw"], n_tm1),
        n1_00_tm1=_masked_sum(m["cmp"], n_tm1),
        n1_11_tm1=_masked_sum(m["stay"], n_tm1),
    )


def restrict_to_cohort(panel: Panel, cohort_t: int, comparison: Comparison = "never_treated") -> Panel:
    """Keep the groups first treated at ``cohort_t`` plus their comparison groups.

    ``never_treated`` keeps groups with ``d == 0`` throughout;
    ``not_yet_treated`` keeps every other group still untreated at ``cohort_t``.
    """
    if not 2 <= cohort_t <= panel.T:
        raise PanelError(f"cohort period {cohort_t} outside 2..{panel.T}")
    first = panel.first_treated
    cohort = first == cohort_t
    if comparison == "never_treated":
        ctrl = first == 0
    elif comparison == "not_yet_treated":
        ctrl = (first == 0) | (first > cohort_t)
    else:
        raise ValueError(f"unknown comparison kind {comparison!r}")
    if not cohort.any():
        raise PanelError(f"no groups in cohort {cohort_t}")
    if not ctrl.any():
        raise PanelError("no comparison groups")
    return panel.take(np.flatnonzero(cohort | ctrl))


def load_panel(
    path: str | Path,
    *,
    delimiter: str = ",",
    columns: dict[str, str] | None = None,
    unit_level: bool = False,
) -> Panel:
    """Read a long-format delimited file into a :class:`Panel`.

    Expected header is ``group,time,n,y,d`` with optional ``d_true``,
    ``s_true`` and ``effect``; ``columns`` maps these canonical names to the
    file's own headers. With ``unit_level=True`` each row is one unit
    (``group,time,y,d``) and rows are averaged into group-period cells.
    """
    columns = columns or {}
    try:
        raw = pd.read_csv(path, sep=delimiter, dtype={columns.get("group", "group"): str})
    except FileNotFoundError:
        raise
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise PanelError(f"cannot parse {path}: {exc}") from exc
    raw = raw.rename(columns={v: k for k, v in columns.items()})
    required = ["group", "time", "y", "d"] + ([] if unit_level else ["n"])
    missing = [c for c in required if c not in raw.columns]
    if missing:
        raise PanelError(f"missing column(s): {', '.join(missing)}")
    if raw[required].isna().any().any():
        raise PanelError("missing values in required columns")

    if not np.isin(raw["d"].to_numpy(), (0, 1)).all():
        raise PanelError("non-binary treatment")
    if not np.allclose(raw["time"], np.round(raw["time"])):
        raise PanelError("time must be integer")
    raw["time"] = raw["time"].round().astype(int)

    if unit_level:
        if raw.groupby(["group", "time"])["d"].nunique().gt(1).any():
            raise PanelError("treatment varies within a group-period cell (sharp design violated)")
        raw = (
            raw.groupby(["group", "time"], sort=False)
            .agg(n=("y", "size"), y=("y", "mean"), d=("d", "first"))
            .reset_index()
        )
    elif raw.duplicated(["group", "time"]).any():
        dup = raw.loc[raw.duplicated(["group", "time"]), ["group", "time"]].iloc[0]
        raise PanelError(f"duplicate (group,time) row: ({dup['group']},{dup['time']})")

    if (raw["n"] <= 0).any():
        raise PanelError("non-positive cell size")

    times = np.sort(raw["time"].unique())
    T = int(times.max())
    if times.min() != 1 or len(times) != T:
        raise PanelError("time must be 1-based consecutive integers")
    group_ids = list(dict.fromkeys(raw["group"]))
    if len(raw) != len(group_ids) * T:
        raise PanelError("unbalanced panel: missing (group,time) cells")

    raw = raw.assign(_g=raw["group"].map({g: i for i, g in enumerate(group_ids)}))
    raw = raw.sort_values(["_g", "time"])

    def grid(col):
        return raw[col].to_numpy(dtype=float).reshape(len(group_ids), T)

    latent = {c: grid(c) for c in _LATENT if c in raw.columns}
    if ("d_true" in latent) != ("s_true" in latent):
        raise PanelError("d_true and s_true must be given together")
    return Panel(tuple(group_ids), grid("n"), grid("y"), grid("d").astype(np.int8), **latent)


def save_panel(panel: Panel, path: str | Path) -> None:
    """Write ``panel`` in the long format accepted by :func:`load_panel`."""
    G, T = panel.G, panel.T
    data = {
        "group": np.repeat(np.asarray(panel.group_ids, dtype=object), T),
        "time": np.tile(np.arange(1, T + 1), G),
        "n": panel.n.ravel(),
        "y": panel.y.ravel(),
        "d": panel.d.ravel().astype(int),
    }
    for name in _LATENT:
        val = getattr(panel, name)
        if val is not None:
            data[name] = val.ravel()
    df = pd.DataFrame(data)
    df["n"] = df["n"].map(lambda v: int(v) if float(v).is_integer() else v)
    df.to_csv(path, index=False, float_format="%.17g")
