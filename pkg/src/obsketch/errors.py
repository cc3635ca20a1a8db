"""Exception hierarchy shared by all modules.

Each class carries a short machine-readable ``category`` used by the CLI to
report failures.
"""


class ObsketchError(Exception):
    category = "error"


class ConfigError(ObsketchError, ValueError):
    category = "config"


class NoCompressionError(ConfigError):
    """The planned sketch would have at least as many rows as the input."""

    category = "no_compression"


class IncompatibleSketchError(ObsketchError, ValueError):
    category = "incompatible"


class SketchFormatError(ObsketchError, ValueError):
    category = "format"


class BadMagicError(SketchFormatError):
    category = "bad_magic"


class VersionMismatchError(SketchFormatError):
    category = "version"


class TruncatedError(SketchFormatError):
    category = "truncated"


class DataError(ObsketchError, ValueError):
    category = "data"


class ParseError(DataError):
    """Malformed input file; ``line`` is 1-based."""

    category = "parse"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UndefinedRatioError(ObsketchError, ArithmeticError):
    category = "undefined_ratio"
