"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericalError -> 3.
Plain ValueError from library code is treated as a data error.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, corpora, checkpoints)."""


class NumericalError(RuntimeError):
    """Non-finite loss or gradient encountered during training."""
