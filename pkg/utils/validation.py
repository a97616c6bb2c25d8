"""Exception hierarchy and input validators for the controller stack."""

from typing import Iterable, Optional, Tuple

import numpy as np


class ChmpcError(Exception):
    """Base class for every error raised by this package."""
    pass


class ValidationError(ChmpcError):
    """Custom exception for parameter validation failures."""
    pass


class ConfigError(ChmpcError):
    """Scenario or parameter document could not be accepted.

    Attributes:
        key: Dotted key path of the offending entry, when known
    """

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class GridFormatError(ChmpcError):
    """Current grid document is malformed.

    Attributes:
        field: Name of the offending header field or sample block
    """

    def __init__(self, message: str, field: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class GridDimensionError(GridFormatError):
    """Declared dims disagree with the number of samples."""
    pass


class GridNonFiniteError(GridFormatError):
    """A sample is NaN or infinite."""
    pass


class GridSpacingError(GridFormatError):
    """A spacing entry is not strictly positive."""
    pass


class CalibrationError(ChmpcError):
    """Thruster calibration table cannot be parsed or fitted."""
    pass


class RankError(CalibrationError):
    """Calibration regression is rank deficient (e.g. all powers equal)."""
    pass


class GimbalLockError(ChmpcError):
    """Pitch angle is too close to +-pi/2 for the Euler rate transform."""
    pass


class SingularMassMatrixError(ChmpcError):
    """Total mass matrix cannot be inverted."""
    pass


class DareConvergenceError(ChmpcError):
    """Riccati fixed-point iteration did not reach its residual target."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PlantDivergenceError(ChmpcError):
    """Plant state became non-finite during a closed-loop run.

    Attributes:
        record_index: Index of the last control step before divergence
    """

    def __init__(self, message: str, record_index: int):
        super().__init__(message)
        self.record_index = record_index


def validate_finite(values: Iterable[float]) -> Tuple[bool, Optional[str]]:
    """Check that every entry is finite.

    Args:
        values: Array-like of numbers

    Returns:
        Tuple of (is_valid, error_message)
    """
    arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        return False, f"non-finite entry at index {bad}"
    return True, None


def validate_symmetric(matrix: np.ndarray, tol: float = 1e-12) -> Tuple[bool, Optional[str]]:
    """Check that a square matrix is symmetric to within ``tol``."""
    mat = np.asarray(matrix, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        return False, f"expected a square matrix, got shape {mat.shape}"
    if np.max(np.abs(mat - mat.T), initial=0.0) > tol * max(1.0, np.max(np.abs(mat), initial=0.0)):
        return False, "matrix is not symmetric"
    return True, None


def validate_definite(matrix: np.ndarray, strict: bool) -> Tuple[bool, Optional[str]]:
    """Check positive (semi)definiteness through the smallest eigenvalue."""
    for check in (validate_finite, validate_symmetric):
        ok, error = check(matrix)
        if not ok:
            return ok, error
    mat = np.asarray(matrix, dtype=float)
    if mat.size == 0:
        return True, None
    floor = float(np.min(np.linalg.eigvalsh(mat)))
    scale = max(1.0, float(np.max(np.abs(mat))))
    if strict and floor <= 0.0:
        return False, f"matrix is not positive definite (min eigenvalue {floor:.3e})"
    if not strict and floor < -1e-12 * scale:
        return False, f"matrix is not positive semidefinite (min eigenvalue {floor:.3e})"
    return True, None
