"""Input validation helpers.

Small check_* functions used at the public entry points of the package, in
the spirit of sklearn's ``check_array``: validate early, raise
:class:`~physimri.errors.ValidationError` with a message naming the failing
argument and bound.
"""

from __future__ import annotations

import numpy as np

from .errors import GridMismatchError, ValidationError


def check_positive(value, name, strict=True):
    """Check that a scalar is positive (strictly by default)."""
    value = float(value)
    if not np.isfinite(value):
        raise ValidationError(f"{name} must be finite, got {value}")
    if strict and value <= 0:
        raise ValidationError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise ValidationError(f"{name} must be >= 0, got {value}")
    return value


def check_in_range(value, name, lo, hi):
    """Check that ``lo <= value <= hi``."""
    value = float(value)
    if not np.isfinite(value) or not (lo <= value <= hi):
        raise ValidationError(f"{name} must be in [{lo}, {hi}], got {value}")
    return value


def check_interval(interval, name, positive=True):
    """Check a (lo, hi) sampling interval: finite, lo < hi, all positive."""
    try:
        lo, hi = (float(interval[0]), float(interval[1]))
    except (TypeError, ValueError, IndexError):
        raise ValidationError(f"{name} must be a (lo, hi) pair, got {interval!r}")
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValidationError(f"{name} bounds must be finite, got {interval!r}")
    if not lo < hi:
        raise ValidationError(f"{name} must satisfy lo < hi, got [{lo}, {hi}]")
    if positive and lo <= 0:
        raise ValidationError(f"{name} bounds must be positive, got [{lo}, {hi}]")
    return lo, hi


def check_finite_array(arr, name):
    """Check that every element of an array is finite."""
    arr = np.asarray(arr)
    if not np.isfinite(arr).all():
        n_bad = int((~np.isfinite(arr)).sum())
        raise ValidationError(f"{name} contains {n_bad} non-finite values")
    return arr


def check_same_grid(grid_a, grid_b, context=""):
    """Check that two :class:`~physimri.grids.VoxelGrid3D` are compatible.

    Dims must match exactly; affines to 1e-6 mm (the storage precision of
    the file format).
    """
    where = f" ({context})" if context else ""
    if grid_a.dims != grid_b.dims:
        raise GridMismatchError(
            f"grid dims differ{where}: {grid_a.dims} vs {grid_b.dims}"
        )
    if not np.allclose(grid_a.affine, grid_b.affine, atol=1e-6, rtol=0.0):
        raise GridMismatchError(f"grid affines differ{where} beyond 1e-6 mm")


def check_seed(value, name="seed"):
    """Check that a value is usable as a 64-bit RNG seed or stream id."""
    value = int(value)
    if not 0 <= value < 2**64:
        raise ValidationError(f"{name} must be in [0, 2**64), got {value}")
    return value
