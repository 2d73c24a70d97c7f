"""Exception types shared across the package."""


class DataError(Exception):
    """Bad or missing input data: files, directories, malformed images or configs."""


class ConfigError(DataError):
    """Configuration file or override could not be parsed or validated."""


class NumericError(Exception):
    """A numeric invariant was violated (non-finite values, empty masks, ...)."""
