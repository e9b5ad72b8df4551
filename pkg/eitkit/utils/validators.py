import math
import os
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np


class ValidationError(Exception):
    """Custom exception for validation errors"""
    pass


def require(condition: bool, message: str) -> None:
    """Raise ValidationError with message unless condition holds"""
    if not condition:
        raise ValidationError(message)


def validate_positive(name: str, value: float) -> float:
    """Return value as float if it is a finite positive number"""
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(number) or number <= 0:
        raise ValidationError(f"{name} must be positive and finite, got {value!r}")
    return number


def validate_target_h(target_h: float) -> Tuple[bool, Optional[str]]:
    """Check the requested mesh width lies in (0, 1)"""
    try:
        h = float(target_h)
    except (TypeError, ValueError):
        return False, f"target_h must be a number, got {target_h!r}"

    if not 0 < h < 1:
        return False, f"target_h must satisfy 0 < target_h < 1, got {h}"

    return True, None


def validate_conductivity_values(values: np.ndarray) -> Tuple[bool, Optional[str]]:
    """Check per-element conductivities are finite and bounded away from zero"""
    values = np.asarray(values, dtype=float)

    if values.ndim != 1 or values.size == 0:
        return False, "Conductivity values must be a nonempty one-dimensional array"

    if not np.all(np.isfinite(values)):
        return False, "Conductivity values must be finite; use extreme tags for 0 and infinity"

    if np.min(values) <= 0:
        return False, f"Conductivity values must be positive, minimum is {np.min(values)}"

    return True, None


def validate_symmetric(matrix: np.ndarray, rtol: float = 1e-8) -> Tuple[bool, Optional[str]]:
    """Check a square matrix is symmetric to a relative tolerance"""
    matrix = np.asarray(matrix, dtype=float)

    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False, f"Expected a square matrix, got shape {matrix.shape}"

    scale = max(np.linalg.norm(matrix), np.finfo(float).tiny)
    defect = np.linalg.norm(matrix - matrix.T) / scale
    if defect > rtol:
        return False, f"Matrix is not symmetric: relative defect {defect:.3e} exceeds {rtol:.1e}"

    return True, None


def validate_decreasing(name: str, values: Sequence[float], minimum_length: int) -> Tuple[bool, Optional[str]]:
    """Check a sweep list is long enough, positive and strictly decreasing"""
    if len(values) < minimum_length:
        return False, f"{name} needs at least {minimum_length} values, got {len(values)}"

    if any(v <= 0 for v in values):
        return False, f"{name} values must be positive"

    if any(b >= a for a, b in zip(values, values[1:])):
        return False, f"{name} values must be strictly decreasing"

    return True, None


def validate_unique_cells(cells: Iterable[Tuple[int, int]]) -> Tuple[bool, Optional[str]]:
    """Check a pixel list is nonempty and free of duplicates"""
    cells = list(cells)

    if not cells:
        return False, "Pixel list must be nonempty"

    if len(set(cells)) != len(cells):
        return False, "Pixel list contains duplicate cells"

    return True, None


def sanitize_filename(filename: str) -> str:
    """Sanitize an artifact name so it cannot escape the output directory"""
    if not filename:
        return "experiment"

    # Remove path components
    filename = os.path.basename(filename)

    # Remove or replace dangerous characters
    dangerous_chars = ['..', '/', '\\', ':', '*', '?', '"', '<', '>', '|', ' ']
    for char in dangerous_chars:
        filename = filename.replace(char, '_')

    # Ensure filename is not empty after sanitization
    if not filename or filename.startswith('.'):
        filename = f"experiment_{filename}"

    return filename
