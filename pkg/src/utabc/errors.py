"""Exception types shared across the package."""


class UtabcError(Exception):
    """Base class for package-specific errors."""


class SimulationFailure(UtabcError):
    """A forward simulation produced non-finite output (e.g. a diverging ODE)."""


class BudgetExhausted(UtabcError):
    """The simulation budget was used up before the current step completed."""


class SchedulerConverged(UtabcError):
    """The scheduler cannot propose a threshold below the previous one."""


class CurvePredictionFailure(UtabcError):
    """The acceptance-rate curve could not be predicted (degenerate inputs)."""


class GmmFitError(UtabcError):
    """EM could not produce a usable mixture fit."""


class NumericalError(UtabcError):
    """A computation produced zeros/non-finite values where positives are required."""


class ConfigError(UtabcError):
    """Invalid run configuration; message carries line-level diagnostics."""
