"""Exception types raised across the package."""


class PnprrError(Exception):
    """Base class for all package errors."""


class DimensionError(PnprrError, ValueError):
    """Field shapes or point dimensionality disagree."""


class ParameterError(PnprrError, ValueError):
    """A hyperparameter is outside its valid range."""


class DivergenceError(PnprrError, FloatingPointError):
    """Geodesic shooting produced NaN/Inf."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite velocity at integration step {step}")


class StallError(PnprrError, RuntimeError):
    """The line search found no descent; carries the energy trace so far."""

    def __init__(self, message, trace=None, iteration=None):
        self.trace = list(trace or [])
        self.iteration = iteration
        super().__init__(message)


class PluginError(PnprrError, RuntimeError):
    """An external denoiser failed or returned an unusable field."""

    def __init__(self, message, stderr=""):
        self.stderr = stderr
        super().__init__(message if not stderr else f"{message}\n--- plugin stderr ---\n{stderr}")


class FieldFormatError(PnprrError, ValueError):
    """A field file could not be parsed."""


class UndefinedDiceError(PnprrError, ValueError):
    """Dice of two empty masks."""
