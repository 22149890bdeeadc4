"""Exception hierarchy shared across the package."""


class McDockError(Exception):
    """Base class for all errors raised deliberately by mcdock."""


class ConfigError(McDockError, ValueError):
    """Invalid configuration value (out of range, unknown enum, ...)."""


class ShapeError(McDockError, ValueError):
    """Array dimensions that do not line up."""


class DataError(McDockError, ValueError):
    """Problem with an input file or in-memory table."""


class ParseError(DataError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class SchemaError(DataError):
    """Input that parses but violates a structural rule (duplicates, unknown keys)."""


class ValidationError(DataError):
    """A value outside its allowed domain (negative RMSD, NaN feature, ...)."""


class ReportVersionError(DataError):
    """Report file written with a schema version this build cannot read."""


class StaleCacheError(McDockError, RuntimeError):
    """Backward pass called with a forward cache from different parameters."""


class CheckpointError(McDockError):
    """Unreadable or incompatible model checkpoint."""
