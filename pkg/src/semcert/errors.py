"""Exception hierarchy shared across the package."""


class SemcertError(Exception):
    """Base class for all package errors."""


class DimensionError(SemcertError, ValueError):
    pass


class ConfigError(SemcertError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class InsufficientDataError(SemcertError, ValueError):
    pass


class EmptyInputError(SemcertError, ValueError):
    pass


class CodeError(SemcertError, IndexError):
    pass


class RangeError(SemcertError, ValueError):
    pass


class PlacementError(SemcertError, RuntimeError):
    pass


class JoinError(SemcertError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DegenerateError(SemcertError, ValueError):
    pass


class StateError(SemcertError, RuntimeError):
    pass


class FormatError(SemcertError, ValueError):
    """Malformed embedding, codebook, qrels or run file."""
