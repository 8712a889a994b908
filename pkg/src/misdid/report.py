"""Deterministic serialization of results to JSON and delimited tables."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from typing import Any

import numpy as np

from .estimators import DidComponents, EstimateResult
from .panel import CellCounts, ValidationReport
from .simulate import TEST_STATS, McSummary
from .spectest import TauGrid, TestOutcome, Verdict


def _key(k) -> str:
    if isinstance(k, tuple):
        return ",".join(str(x) for x in k)
    return str(k)


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types; NaN and infinities become ``None``."""
    if isinstance(obj, McSummary):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, TauGrid):
        return {
            "kind": obj.kind,
            "g": obj.g,
            "entries": [
                {"t": t, "l": l, "value": float(v), "defined": bool(ok)}
                for (t, l), v, ok in zip(obj.index_set, obj.values, obj.defined)
            ],
        }
    if isinstance(obj, DidComponents):
        names = ("did", "did_star", "did_dstar", "did_dstar_tm1", "did_tstar_tm1", "did_s", "did_sdagger_tm1", "lambda_tm1")
        return {"periods": to_jsonable(obj.periods), **{n: to_jsonable(getattr(obj, n)) for n in names}}
    if isinstance(obj, (EstimateResult, TestOutcome, Verdict, ValidationReport, CellCounts)):
        out = {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, ValidationReport):
            out["ok"] = obj.ok
        return out
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {_key(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(doc: Any) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(to_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _rows_to_csv(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return f"{x:.4f}" if isinstance(x, float) else str(x)


def table(result: Any) -> str:
    """Delimited summary table.

    Estimator studies give one row per estimator (mean bias, RMSE); test
    studies give one row per statistic with a column per scenario.
    """
    if isinstance(result, McSummary):
        if result.kind == "estimators":
            rows = [["estimator", "mean_bias", "rmse", "n", "failed"]]
            for name, s in result.estimators.items():
                rows.append([name, _fmt(s.mean_bias), _fmt(s.rmse), s.n, s.failed])
            return _rows_to_csv(rows)
        scen = list(result.tests)
        rows = [["test", *scen]]
        for stat in TEST_STATS:
            rows.append([stat, *(_fmt(result.tests[s][stat]) for s in scen)])
        return _rows_to_csv(rows)
    if isinstance(result, EstimateResult):
        rows = [["field", "value"]]
        for name in ("estimator", "point", "se", "ci_low", "ci_high", "p_value_ate_zero", "n_s", "n_s_star_hat"):
            rows.append([name, _fmt(getattr(result, name))])
        rows.append(["flags", ";".join(result.flags)])
        return _rows_to_csv(rows)
    if isinstance(result, Verdict):
        rows = [["test", "value", "critical_value", "level", "reject", "pvalue"]]
        for t in (result.pt_test, result.mc_test):
            if t is not None:
                rows.append([f"{t.statistic_kind}_{t.kind}", _fmt(t.value), _fmt(t.critical_value), t.level, t.reject, _fmt(t.pvalue)])
        rows.append(["verdict", result.outcome, "", "", "", ""])
        return _rows_to_csv(rows)
    if isinstance(result, TestOutcome):
        rows = [["test", "value", "critical_value", "level", "reject", "pvalue"]]
        rows.append([f"{result.statistic_kind}_{result.kind}", _fmt(result.value), _fmt(result.critical_value), result.level, result.reject, _fmt(result.pvalue)])
        return _rows_to_csv(rows)
    if isinstance(result, ValidationReport):
        rows = [["severity", "message"]]
        rows += [["error", m] for m in result.errors] + [["warning", m] for m in result.warnings]
        return _rows_to_csv(rows)
    raise TypeError(f"no table layout for {type(result).__name__}")


def report(result: Any, format: str = "json") -> str:
    if format == "json":
        return dumps(result)
    if format == "table":
        return table(result)
    raise ValueError(f"unknown format {format!r}")
