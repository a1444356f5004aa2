"""Exception types raised across the package."""


class FwPKMError(Exception):
    pass


class DimensionError(FwPKMError, ValueError):
    """Operand lengths or shapes do not agree."""


class ArgumentError(FwPKMError, ValueError):
    """An argument is outside its allowed range."""


class NumericError(FwPKMError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class StorageError(FwPKMError, OSError):
    """Snapshot read/write failure or malformed file."""


class ConfigMismatchError(StorageError):
    """A snapshot was written with a different memory configuration."""
