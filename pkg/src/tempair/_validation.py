"""Small argument checks used across modules."""

import numbers

import numpy as np

from .exceptions import InvalidArgumentError


def check_positive(value, name, *, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidArgumentError(f"{name} must be a finite real, got {value!r}")
    if strict and value <= 0:
        raise InvalidArgumentError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise InvalidArgumentError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_count(value, name, *, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InvalidArgumentError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_finite_array(x, name, *, ndim=None):
    arr = np.asarray(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidArgumentError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def check_symmetric_psd(matrix, name, *, rtol=1e-10):
    """Return ``matrix`` as a float array after checking symmetry and PSD-ness.

    Eigenvalues down to ``-rtol * ||matrix||`` are tolerated as round-off.
    """
    m = check_finite_array(matrix, name, ndim=2)
    if m.shape[0] != m.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got shape {m.shape}")
    scale = max(np.abs(m).max(), 1e-300)
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidArgumentError(f"{name} must be symmetric")
    eig = np.linalg.eigvalsh(m)
    norm = np.abs(eig).max() if eig.size else 0.0
    if eig.size and eig.min() < -rtol * norm:
        raise InvalidArgumentError(f"{name} must be positive semi-definite (min eigenvalue {eig.min():.3g})")
    return m


def rel_err(a, b, floor=1e-12):
    """Elementwise relative error with an absolute floor near zero."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
