"""Input validation helpers shared across the package."""

from __future__ import annotations

import numbers

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a value that must be finite is NaN or infinite."""


def check_vector(x, size=None, name="input"):
    """Return ``x`` as a 1-D float64 array, rejecting non-finite entries.

    Parameters
    ----------
    x : array-like
        Values to check.
    size : int, optional
        Required length.
    name : str
        Used in error messages.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {size}")
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NonFiniteError(
            f"{name} has non-finite value {arr[bad[0]]!r} at index {int(bad[0])}"
        )
    return arr


def check_finite_scalar(x, name="value"):
    if not isinstance(x, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(x).__name__}")
    x = float(x)
    if not np.isfinite(x):
        raise NonFiniteError(f"{name} is not finite: {x!r}")
    return x


def check_positive(x, name):
    x = check_finite_scalar(x, name)
    if x <= 0:
        raise ValueError(f"{name} must be > 0, got {x}")
    return x


def check_unit_interval(x, name):
    x = check_finite_scalar(x, name)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return x


def check_random_state(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot seed a Generator from {type(seed).__name__}")
