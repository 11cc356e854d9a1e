"""Input validation helpers shared by the functional API and the estimators."""
import numpy as np
from sklearn.utils.validation import check_array

PROB_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when a payoff or measure does not live on the ambient space."""


def check_payoff(x, d=None, *, name="X"):
    """Return ``x`` as a finite float vector of length ``d``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise DimensionError(f"{name} has {arr.shape[0]} atoms, space has {d}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def check_payoffs(X, d=None, *, name="X"):
    """Return a 2-D float array of payoffs, one row per payoff.

    A single 1-D payoff is promoted to a one-row batch. The second return value
    says whether that happened, so callers can unwrap scalar results.
    """
    arr = np.asarray(X, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    arr = check_array(arr, ensure_2d=True, dtype=float, ensure_min_samples=1,
                      input_name=name)
    if d is not None and arr.shape[1] != d:
        raise DimensionError(f"{name} has {arr.shape[1]} atoms, space has {d}")
    return arr, single


def check_measure(q, d=None, *, tol=PROB_TOL, name="Q"):
    """Validate a probability vector: nonnegative entries summing to one."""
    arr = check_payoff(q, d, name=name)
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative mass")
    if abs(arr.sum() - 1.0) > tol:
        raise ValueError(f"{name} sums to {arr.sum()!r}, expected 1")
    return arr
