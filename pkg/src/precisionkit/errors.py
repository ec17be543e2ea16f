"""Exception types raised across the toolkit."""


class PrecisionKitError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(PrecisionKitError, ValueError):
    """Array shapes do not agree with the model dimensions."""


class UnsupportedOrderError(PrecisionKitError, ValueError):
    """Requested embedding order has no tabulated smoothness matrix."""


class BoundaryError(PrecisionKitError, IndexError):
    """A sample window or pose falls outside the valid range."""


class ValidationError(PrecisionKitError, ValueError):
    """A physical or probabilistic argument is out of its domain."""


class NumericalDegeneracyError(PrecisionKitError, ArithmeticError):
    """A covariance or precision that must be SPD is not."""


class DivergenceError(PrecisionKitError, RuntimeError):
    """Free-energy ascent failed even after line-search exhaustion."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class ConfigError(PrecisionKitError, ValueError):
    """Experiment or scenario configuration could not be parsed."""
