"""Exception hierarchy. The CLI maps these onto exit codes."""


class PanelvalError(Exception):
    """Base class for all package errors."""


class InputError(PanelvalError, ValueError):
    """Bad input: missing file, schema violation, unknown label, duplicate cell."""


class NumericalError(PanelvalError, ArithmeticError):
    """A numerical procedure could not produce a result."""


class ConvergenceError(NumericalError):
    pass


class SeparationError(NumericalError):
    """Outcome is perfectly separated by the predictor; no finite MLE exists."""


class IdentifiabilityError(NumericalError):
    pass
