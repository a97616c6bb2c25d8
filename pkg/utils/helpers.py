"""
Utility functions shared by the controller modules.
Symbolic angle wrapping and vector coercion.
"""

from typing import Any, Iterable

import numpy as np

from utils.validation import ValidationError


def wrap_angle_expr(backend: Any, angle: Any) -> Any:
    """Smooth-away-from-pi wrap usable on symbolic values."""
    return backend.atan2(backend.sin(angle), backend.cos(angle))


def as_vector(values: Iterable[float], size: int, name: str) -> np.ndarray:
    """Coerce to a finite 1-D float array of the given length.

    Args:
        values: Array-like input
        size: Required length
        name: Field name used in the error message

    Returns:
        Fresh float array

    Raises:
        ValidationError: If the shape is wrong or an entry is not finite
    """
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size != size:
        raise ValidationError(f"{name}: expected {size} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: entries must be finite")
    return arr
