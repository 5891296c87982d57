"""
Exception hierarchy shared by all modules. Every domain error derives from
MoeaarException so the CLI and the bench harness can catch them in one place.
"""


class MoeaarException(Exception):
    """
    Base class for all source imaging exceptions.
    """


class GeometryError(MoeaarException, ValueError):
    """Source or sensor placement violates the head geometry."""


class InvalidPartitionError(MoeaarException, ValueError):
    """ROI partition cannot be built (e.g. fewer points than ROIs)."""


class InvalidMontageError(MoeaarException, ValueError):
    """Sensor montage cannot be built."""


class LeadFieldParseError(MoeaarException):
    """Lead-field file does not match its header."""


class LeadFieldDataError(MoeaarException):
    """Lead-field file contains non-finite entries."""


class ShapeError(MoeaarException, ValueError):
    """Array dimensions do not agree."""


class ParameterError(MoeaarException, ValueError):
    """Parameter outside its admissible range."""


class ConfigurationError(MoeaarException):
    """Run configuration is invalid or unreadable."""


class UnknownMethodError(ConfigurationError):
    """Method name not known to the bench harness."""


class StateError(MoeaarException):
    """Operation called on an object in the wrong state."""


class UndefinedTruthError(MoeaarException):
    """Metric requested against an all-zero ground truth."""


class UndefinedLambdaError(MoeaarException):
    """Balance weight requested for a zero current density."""


class DegenerateGcvError(MoeaarException):
    """Every candidate weight uses up all degrees of freedom."""


class NoActiveSolutionError(MoeaarException):
    """No front member carries active sources."""


class NumericError(MoeaarException):
    """Iterative linear algebra failed to converge."""


class StopBench(Exception):
    """
    Exception for aborting the running benchmark.
    """
