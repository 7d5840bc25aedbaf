"""Exception taxonomy shared by all cilab modules."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of the operation."""


class ProtocolError(RuntimeError):
    """Operation violates the benchmark / method protocol contract."""


class UsageError(RuntimeError):
    """API misuse: stale cache, mixed benchmarks, empty series, etc."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values and was aborted."""


class FormatError(ValueError):
    """A file on disk does not match its expected binary format."""


class ManifestError(FormatError):
    """A model directory is missing entries its manifest promises."""
