"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes: configuration/usage problems
exit 1, data problems exit 2, numerical failures exit 3.
"""


class MotionDriftError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(MotionDriftError, ValueError):
    """Invalid configuration: bad dimensions, unknown keys, impossible splits."""


class InvalidInputError(MotionDriftError, ValueError):
    """Input violates an operation's precondition (shape, emptiness, degeneracy)."""


class DataFormatError(MotionDriftError, ValueError):
    """A file or stream does not conform to its declared format."""


class NumericalError(MotionDriftError, RuntimeError):
    """Optimization or numerics diverged (non-finite loss, etc.)."""
