"""Exception taxonomy shared by all modules.

The CLI maps each class to a machine-parsable error category and exit code.
"""


class ParameterError(ValueError):
    """An argument violates an operation's precondition."""


class ContractError(ValueError):
    """Inputs are individually valid but mutually inconsistent (e.g. shapes)."""


class TrainingError(RuntimeError):
    """Training diverged or otherwise failed; message names the epoch."""


class DataIOError(OSError):
    """A file could not be read or parsed; message names the file."""


class UndefinedMetricError(ValueError):
    """A metric has no defined value for this input (e.g. zero power)."""


class ConfigError(ValueError):
    """A run configuration failed strict parsing; message carries the line."""
