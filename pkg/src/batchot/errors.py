"""Exception hierarchy shared across the package."""


class BatchOTError(Exception):
    """Base class for every error raised by batchot."""


class InputError(BatchOTError, ValueError):
    """Malformed input: bad shape, non-finite entry, invalid parameter."""


class SolverError(BatchOTError, ArithmeticError):
    """Numerical failure inside an iterative solver."""


class UnsupportedOracleError(InputError):
    """The brute-force oracle was asked for a case it does not cover."""


class TraceMismatchError(InputError):
    """A forward trace was used with a network it was not produced by."""
