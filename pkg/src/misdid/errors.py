"""Exception hierarchy shared by every module."""


class MisdidError(Exception):
    """Base class for all library errors."""


class PanelError(MisdidError, ValueError):
    """Malformed or invalid panel data (bad file, violated hard assumption)."""


class EstimationError(MisdidError, ArithmeticError):
    """An estimator or statistic is undefined on the supplied panel."""


class BootstrapError(EstimationError):
    """Every bootstrap draw was unusable."""


class ConfigError(MisdidError, ValueError):
    """Invalid job configuration."""
