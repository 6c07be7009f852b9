"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3.
"""

from __future__ import annotations


class ModvqaError(Exception):
    """Base class for errors raised by this package."""


class DataError(ModvqaError):
    """Bad or inconsistent input data: clips, manifests, configs, weight files."""


class NumericError(ModvqaError):
    """Numerical failure during optimization (NaN gradients, NaN loss)."""
