"""Exception hierarchy shared by the library and the command-line front end."""


class QosaError(Exception):
    """Base class for every error raised by ``qosa_forest``."""

    exit_code = 1


class ConfigurationError(QosaError, ValueError):
    """Invalid parameters, missing columns, incompatible shapes."""

    exit_code = 2


class IngestionError(QosaError, ValueError):
    """Input data could not be parsed or contains non-finite values."""

    exit_code = 3


class EstimationError(QosaError, RuntimeError):
    """A numerical procedure could not produce an estimate."""

    exit_code = 4


class DegenerateOutputError(EstimationError):
    """The output sample is constant, so the index denominator vanishes."""
