"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code that reports it.
"""


class RandOpenError(Exception):
    exit_code = 1


class ConfigurationError(RandOpenError, ValueError):
    """Invalid system, environment or experiment definition."""

    exit_code = 2


class PreconditionError(RandOpenError, ValueError):
    """An operation was called outside its documented domain."""

    exit_code = 2


class UnsupportedSystemError(RandOpenError):
    """Exact path requested for a system lacking the required structure."""

    exit_code = 2


class HorizonError(RandOpenError, IndexError):
    """Environment index outside the declared two-sided horizon."""

    exit_code = 2


class DegenerateSystemError(RandOpenError, ArithmeticError):
    """Mass vanished (hole swallows everything) or a variance is zero."""

    exit_code = 3


class ConvergenceError(RandOpenError, ArithmeticError):
    exit_code = 3


class SamplingError(RandOpenError, RuntimeError):
    exit_code = 3


class MissingArtifactError(RandOpenError, FileNotFoundError):
    exit_code = 4
