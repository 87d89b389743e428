"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures to process exit statuses without inspecting messages.
"""


class MijointError(Exception):
    exit_code = 1


class ConfigError(MijointError):
    """Bad configuration: unknown keys, impossible task recipes, tiny classes."""

    exit_code = 2


class ParameterError(ConfigError, ValueError):
    """An argument violates a documented invariant."""


class DataError(MijointError):
    exit_code = 3


class FormatError(DataError):
    """Input file does not follow the container layout."""


class IntegrityError(DataError):
    """Input is well formed but internally inconsistent (gaps, short trials)."""


class TrainingError(DataError, ValueError):
    """A classifier cannot be trained on the given examples."""


class NumericalError(MijointError, ArithmeticError):
    """Ill-conditioned or degenerate numerical input."""

    exit_code = 4


class DegenerateDataError(NumericalError):
    pass
