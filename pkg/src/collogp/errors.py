"""Exception types shared across the package."""


class CollogpError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(CollogpError):
    pass


class NonFinite(CollogpError):
    pass


class NotPositiveDefinite(CollogpError):
    pass


class SingularDiagonal(CollogpError):
    pass


class UnsupportedOrder(CollogpError):
    pass


class MissingCoefficient(CollogpError):
    pass


class IndexOutOfRange(CollogpError):
    pass


class UnknownPreset(CollogpError):
    pass


class UnknownFunction(CollogpError):
    pass


class SchemaError(CollogpError):
    """Raised on malformed configuration; message carries the field path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class RangeOutOfDomain(CollogpError):
    pass


class Instability(CollogpError):
    pass
