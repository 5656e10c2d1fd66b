"""Exception hierarchy shared by every module."""


class OrigiNetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(OrigiNetError, ValueError):
    pass


class NumericError(OrigiNetError, ArithmeticError):
    pass


class StateError(OrigiNetError, RuntimeError):
    pass


class ConfigError(OrigiNetError, ValueError):
    pass


class FormatError(OrigiNetError, ValueError):
    pass


class ProtocolError(OrigiNetError, ValueError):
    """Raised when an evaluation protocol cannot be run on the given data."""


class ManifestError(OrigiNetError, ValueError):
    pass
