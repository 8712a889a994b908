"""Staggered-adoption difference-in-differences robust to one-period-late treatment coding."""

__version__ = "0.1.0"

from .errors import BootstrapError, ConfigError, EstimationError, MisdidError, PanelError
from .estimators import (
    DidComponents,
    EstimateResult,
    VVector,
    assemble_v,
    components,
    did,
    did_s,
    did_s_star,
    estimate,
    f_of_v,
    twfe,
)
from .inference import BootstrapConfig, bootstrap_statistic, estimate_with_ci
from .panel import GroupSeries, Panel, ValidationReport, cell_counts, load_panel, restrict_to_cohort, validate
from .simulate import DgpSpec, McSummary, gen_panel, run_mc_estimators, run_mc_tests, true_estimand_oracle
from .spectest import TauGrid, TestOutcome, Verdict, Window, bootstrap_test, decision_rule, tau_00, tau_10, tau_grid

import types as _types

__all__ = sorted(n for n, v in globals().items() if not n.startswith("_") and not isinstance(v, _types.ModuleType))
