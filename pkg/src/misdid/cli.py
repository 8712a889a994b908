"""Command-line front end: ``misdid {validate,estimate,test,simulate}``.

Settings come from, in increasing priority: a named preset, a YAML file given
with ``--config``, and explicit flags. Every run writes a JSON report that
echoes the effective configuration so the job can be repeated.

Exit status: 0 success, 2 bad configuration, 3 data error, 4 estimation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import __version__
from .errors import ConfigError, EstimationError, PanelError
from .estimators import ESTIMATORS, estimate
from .inference import BootstrapConfig, estimate_with_ci
from .panel import load_panel, require_valid, restrict_to_cohort, validate
from .report import dumps, report
from .simulate import DEFAULT_ESTIMATORS, SCENARIOS, DgpSpec, run_mc_estimators, run_mc_tests
from .spectest import Window, bootstrap_test, decision_rule

COMMANDS = ("validate", "estimate", "test", "simulate")
PRESETS = ("table1", "table2", "table3", "twfe-bias")
EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 2, 3, 4
# settings that do not change results and are left out of the report
_NOT_ECHOED = ("output", "format", "threads")


@dataclass
class JobConfig:
    command: str
    input: str | None = None
    output: str | None = None
    format: str = "json"
    seed: int | None = None
    threads: int = 1
    delimiter: str = ","
    columns: dict | None = None
    unit_level: bool = False
    # estimation
    estimator: str = "did_s_star"
    trim: float | None = None
    clamp_lambda: bool = False
    bootstrap: int = 0
    level: float = 0.95
    # testing
    kind: str = "rule"
    stat: str = "sum"
    alpha: float = 0.05
    gamma: float = 0.05
    window: dict = field(default_factory=dict)
    cohort: int | None = None
    comparison: str = "never_treated"
    # simulation
    preset: str | None = None
    study: str = "estimators"
    dgp: dict = field(default_factory=dict)
    estimators: list = field(default_factory=lambda: list(DEFAULT_ESTIMATORS))
    scenarios: list = field(default_factory=lambda: list(SCENARIOS))
    reps: int = 500
    warp: bool = True
    benchmark: str = "mean_effect"

    def validate(self) -> "JobConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command != "simulate" and not self.input:
            raise ConfigError(f"{self.command} needs --input")
        stochastic = self.command == "simulate" or self.command == "test" or self.bootstrap > 0
        if stochastic and self.seed is None:
            raise ConfigError("a seed is required for this command")
        if self.format not in ("json", "table"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.estimator not in (*ESTIMATORS, "twfe"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.estimator != "did_s_star" and (self.trim or self.clamp_lambda):
            raise ConfigError("--trim and --clamp-lambda only apply to did_s_star")
        if self.kind not in ("pt", "mc", "rule"):
            raise ConfigError(f"unknown test kind {self.kind!r}")
        if self.stat not in ("sum", "max"):
            raise ConfigError(f"unknown statistic {self.stat!r}")
        for name in ("alpha", "gamma", "level"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.comparison not in ("never_treated", "not_yet_treated"):
            raise ConfigError(f"unknown comparison {self.comparison!r}")
        if self.bootstrap < 0 or self.reps < 1:
            raise ConfigError("bootstrap must be >= 0 and reps >= 1")
        if self.study not in ("estimators", "tests"):
            raise ConfigError(f"unknown study {self.study!r}")
        if self.command == "test" and self.bootstrap < 1:
            raise ConfigError("tests need --bootstrap >= 1")
        bad = set(self.window) - {"max_lag", "min_lag", "drop_degenerate"}
        if bad:
            raise ConfigError(f"unknown window keys {sorted(bad)}")
        try:
            self.dgp_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad dgp: {exc}") from None
        return self

    def dgp_spec(self) -> DgpSpec:
        return DgpSpec(**{**self.dgp, "seed": self.seed or 0})

    def echo(self) -> dict:
        out = dataclasses.asdict(self)
        for k in _NOT_ECHOED:
            out.pop(k)
        return out


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("misdid.presets").joinpath(f"{name}.yaml").read_text()
    return yaml.safe_load(text) or {}


def _load_yaml(path: str) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


def _parse_window(text: str) -> dict:
    parts = text.split(":")
    if len(parts) > 2:
        raise ConfigError("--window takes MAX_LAG[:MIN_LAG]")
    try:
        keys = ("max_lag", "min_lag")
        return {k: int(v) for k, v in zip(keys, parts) if v}
    except ValueError:
        raise ConfigError(f"bad --window {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS  # unset flags stay out of the namespace
    common.add_argument("--config", default=S, help="YAML file with job settings")
    common.add_argument("--input", default=S, help="long-format delimited panel file")
    common.add_argument("--output", default=S, help="path for the JSON report")
    common.add_argument("--format", choices=("json", "table"), default=S, help="what to print on stdout")
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--threads", type=int, default=S)
    common.add_argument("--delimiter", default=S)
    common.add_argument("--unit-level", dest="unit_level", action="store_true", default=S)
    common.add_argument("--bootstrap", "-b", "--b", dest="bootstrap", type=int, default=S, help="bootstrap draws")
    common.add_argument("--level", type=float, default=S, help="confidence level of bootstrap intervals")
    common.add_argument("--estimator", default=S)
    common.add_argument("--trim", type=float, default=S)
    common.add_argument("--clamp-lambda", dest="clamp_lambda", action="store_true", default=S)
    common.add_argument("--kind", choices=("pt", "mc", "rule"), default=S)
    common.add_argument("--stat", choices=("sum", "max"), default=S)
    common.add_argument("--alpha", type=float, default=S)
    common.add_argument("--gamma", type=float, default=S)
    common.add_argument("--window", type=_parse_window, default=S, help="MAX_LAG[:MIN_LAG]")
    common.add_argument("--drop-degenerate", dest="drop_degenerate", action="store_true", default=S)
    common.add_argument("--cohort", type=int, default=S)
    common.add_argument("--comparison", choices=("never_treated", "not_yet_treated"), default=S)
    common.add_argument("--preset", choices=PRESETS, default=S)
    common.add_argument("--study", choices=("estimators", "tests"), default=S)
    common.add_argument("--reps", type=int, default=S)
    common.add_argument("--g", type=int, default=S, help="number of simulated groups")
    common.add_argument("--warp", action=argparse.BooleanOptionalAction, default=S)

    parser = argparse.ArgumentParser(prog="misdid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(argv: Sequence[str]) -> JobConfig:
    """Merge preset, config file and flags (in that order) into a :class:`JobConfig`."""
    ns = vars(build_parser().parse_args(argv))
    flags = {k: v for k, v in ns.items() if k != "config"}
    merged: dict[str, Any] = {}
    file_cfg = _load_yaml(ns["config"]) if "config" in ns else {}
    preset = flags.get("preset", file_cfg.get("preset"))
    if preset is not None:
        merged.update(load_preset(preset))
    merged.update(file_cfg)

    merged["dgp"] = dict(merged.get("dgp") or {})
    if "g" in flags:
        merged["dgp"]["g"] = flags.pop("g")
    merged["window"] = dict(merged.get("window") or {})
    merged["window"].update(flags.pop("window", {}))
    if flags.pop("drop_degenerate", False):
        merged["window"]["drop_degenerate"] = True
    merged.update(flags)

    names = {f.name for f in dataclasses.fields(JobConfig)}
    unknown = sorted(set(merged) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        cfg = JobConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _window(cfg: JobConfig) -> Window:
    return Window(**cfg.window)


def execute(cfg: JobConfig) -> tuple[Any, int]:
    """Run the job; returns the result object and the exit status it implies."""
    if cfg.command == "simulate":
        spec = cfg.dgp_spec()
        if cfg.study == "estimators":
            res = run_mc_estimators(spec, cfg.reps, cfg.estimators, workers=cfg.threads, benchmark=cfg.benchmark)
        else:
            unknown = set(cfg.scenarios) - set(SCENARIOS)
            if unknown:
                raise ConfigError(f"unknown scenarios {sorted(unknown)}")
            res = run_mc_tests(
                spec, cfg.scenarios, cfg.reps, warp=cfg.warp, level=cfg.alpha,
                b=max(cfg.bootstrap, 1), window=_window(cfg), workers=cfg.threads,
            )
        return res, 0

    try:
        panel = load_panel(cfg.input, delimiter=cfg.delimiter, columns=cfg.columns, unit_level=cfg.unit_level)
    except OSError as exc:
        raise PanelError(f"cannot read {cfg.input}: {exc}") from None
    if cfg.command == "validate":
        rep = validate(panel)
        return rep, 0 if rep.ok else EXIT_DATA

    require_valid(panel)
    if cfg.cohort is not None:
        panel = restrict_to_cohort(panel, cfg.cohort, cfg.comparison)
    boot = BootstrapConfig(b=max(cfg.bootstrap, 1), seed=cfg.seed or 0, level=cfg.level, threads=cfg.threads)
    if cfg.command == "estimate":
        opts = {}
        if cfg.estimator == "did_s_star":
            opts = {"trim_threshold": cfg.trim, "clamp_lambda": cfg.clamp_lambda}
        if cfg.bootstrap > 0:
            return estimate_with_ci(panel, cfg.estimator, boot, **opts), 0
        return estimate(panel, cfg.estimator, **opts), 0

    window = _window(cfg)
    if cfg.kind == "rule":
        return decision_rule(panel, cfg.alpha, cfg.gamma, boot, window, cfg.stat), 0
    level = cfg.alpha if cfg.kind == "pt" else cfg.gamma
    return bootstrap_test(panel, cfg.kind, cfg.stat, level, boot, window), 0


def build_report(cfg: JobConfig, result: Any) -> dict:
    return {
        "command": cfg.command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "input": {"path": cfg.input, "sha256": _digest(cfg.input)} if cfg.input else None,
        "result": result,
    }


def run(cfg: JobConfig) -> int:
    """Execute ``cfg``, write the report and return the exit status."""
    result, status = execute(cfg)
    doc = build_report(cfg, result)
    text = dumps(doc)
    if cfg.output:
        Path(cfg.output).write_text(text)
    sys.stdout.write(report(result, "table") if cfg.format == "table" else text)
    return status


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(resolve_config(argv))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PanelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
