"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN or infinite."""


class ConfigError(ValueError):
    """An experiment configuration is invalid."""


class CorruptionError(IOError):
    """A persisted file failed its integrity check."""


class UnsupportedVersionError(IOError):
    """A persisted file was written by an unknown format version."""
