"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
InvariantError -> 4.
"""


class PShadowError(Exception):
    pass


class ConfigError(PShadowError, ValueError):
    pass


class DataError(PShadowError, ValueError):
    pass


class WindowError(DataError):
    """Requested time window falls outside the graph."""


class InvariantError(PShadowError, AssertionError):
    pass
