class DdtError(Exception):
    """Base class for errors raised by ddtree."""


class DataError(DdtError, ValueError):
    """Malformed data, schema or region."""


class ConfigError(DdtError, ValueError):
    """Invalid run or induction configuration."""


class TeacherError(DdtError, RuntimeError):
    """The teacher could not produce predictions (unreachable, protocol violation, bad output)."""


class UninformativeSplit(DdtError):
    """No candidate split reduces the criterion (constant response or no candidates)."""


class InvariantError(DdtError):
    """An internal consistency check failed; indicates a bug rather than bad input."""
