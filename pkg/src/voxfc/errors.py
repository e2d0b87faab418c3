"""Exception types raised across the package."""

import numpy as np


class VoxfcError(Exception):
    """Base class for all package errors."""


class DomainError(VoxfcError, ValueError):
    """An argument lies outside the domain of the model or formula."""


class SingularityError(VoxfcError, ValueError):
    """Input would produce a rank-deficient correlation matrix."""


class SizeError(VoxfcError, ValueError):
    """A dense matrix would exceed the configured size cap."""


class NotPDError(VoxfcError, np.linalg.LinAlgError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot, message=None):
        self.pivot = int(pivot)
        super().__init__(message or f"matrix is not positive definite (pivot {self.pivot} <= 0)")


class DataFormatError(VoxfcError, ValueError):
    """A data or configuration file failed to parse or validate."""


class FitError(VoxfcError, RuntimeError):
    """A numerical fit could not produce a usable estimate."""
