"""Exception types shared across the package."""


class RlsError(Exception):
    """Base class for all package errors."""


class DimensionError(RlsError):
    """Shapes of the involved arrays are inconsistent."""


class ParameterError(RlsError):
    """A scalar parameter is outside its admissible range."""


class NumericalBreakdownError(RlsError):
    """The iterative solver met a non-finite value or an indefinite direction."""


class CheckpointError(RlsError):
    """A checkpoint file is malformed or does not match the current model."""
