"""Exception hierarchy shared across the package."""

from __future__ import annotations

import numpy as np


class EigenShieldError(Exception):
    """Base class for all package errors."""


class DomainError(EigenShieldError, ValueError):
    """A parameter lies outside the domain of the operation."""


class DegenerateInputError(EigenShieldError, ValueError):
    """The input is too small or too degenerate to compute the quantity."""


class ContractError(EigenShieldError, ValueError):
    """A documented precondition on the input layout was violated."""


class DimensionMismatchError(EigenShieldError, ValueError):
    """Array shapes are incompatible."""


class NumericError(EigenShieldError, ArithmeticError):
    """Non-finite values or a failed numerical routine."""


class EmptySubspaceError(EigenShieldError, ValueError):
    """A projector was requested for an empty set of directions."""


class CalibrationError(EigenShieldError, RuntimeError):
    """Phase-1 calibration could not produce a threshold.

    The eigenvalue spectrum that led to the failure is attached for diagnosis.
    """

    def __init__(self, message: str, spectrum=None, **diagnostics) -> None:
        super().__init__(message)
        self.spectrum = None if spectrum is None else np.asarray(spectrum, dtype=float)
        self.diagnostics = diagnostics


class CorruptFileError(EigenShieldError, ValueError):
    """A file could not be parsed or is structurally incomplete."""


class VersionMismatchError(EigenShieldError, ValueError):
    """A persisted artifact was written by an incompatible format version."""
