"""Utility functions for the VoI toolkit."""

import os
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from cav.voi.exceptions import ContractViolationError, ValidationError

ArrayLike = Union[float, Sequence[float], np.ndarray]

# Environment variable capping runner parallelism
MAX_WORKERS_ENV = "CAV_VOI_MAX_WORKERS"


def make_rng(seed: Optional[Union[int, np.random.Generator]]) -> np.random.Generator:
    """Create a numpy generator from a seed (generators pass through).

    Args:
        seed: Integer seed, existing generator, or None for fresh entropy

    Returns:
        numpy Generator
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_seeds(seed: int, n: int) -> List[int]:
    """Derive n independent child seeds from one parent seed.

    Args:
        seed: Parent seed
        n: Number of child seeds

    Returns:
        List of n non-negative integers, identical for identical (seed, n)
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(child.generate_state(1)[0]) for child in children]


def as_vector(
    value: ArrayLike, dim: int, name: str = "value", module: Optional[str] = None
) -> np.ndarray:
    """Convert a scalar or sequence to a float vector of a declared size.

    Args:
        value: Scalar, sequence or array
        dim: Required number of entries
        name: Name used in the error message
        module: Module tag attached to the error

    Returns:
        1-D float array of length dim

    Raises:
        ContractViolationError: If the size does not match
    """
    vec = np.atleast_1d(np.asarray(value, dtype=float)).ravel()
    if vec.shape[0] != dim:
        raise ContractViolationError(
            f"{name} has dimension {vec.shape[0]}, expected {dim}", module=module
        )
    return vec


def discount_weights(gamma: float, n: int) -> np.ndarray:
    """Return [1, gamma, gamma^2, ...] of length n (gamma=0 gives [1, 0, ...])."""
    return np.power(float(gamma), np.arange(n, dtype=float))


def check_probability_vector(p: np.ndarray, name: str, tol: float = 1e-12) -> None:
    """Validate that p is non-negative and sums to one.

    Args:
        p: Probability vector
        name: Name used in the error message
        tol: Allowed deviation of the sum from one

    Raises:
        ContractViolationError: If p is not a distribution
    """
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ContractViolationError(f"{name} has negative or non-finite entries")
    total = float(np.sum(p))
    if abs(total - 1.0) > tol:
        raise ContractViolationError(f"{name} sums to {total!r}, expected 1")


def ensure_dir(path: str) -> str:
    """Create a directory if needed and check that it is writable.

    Args:
        path: Directory path

    Returns:
        The same path

    Raises:
        ValidationError: If the directory cannot be created or written
    """
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ValidationError(f"Cannot create output directory {path}: {e}") from e
    if not os.access(path, os.W_OK):
        raise ValidationError(f"Output directory is not writable: {path}")
    return path


def write_frame(frame: pd.DataFrame, path: str) -> str:
    """Write a DataFrame as CSV with a header row and no index.

    Floats use the shortest repr that reads back to the same value, and lines end in LF.

    Args:
        frame: Data to write
        path: Destination file

    Returns:
        The path written
    """
    parent = os.path.dirname(path)
    if parent:
        ensure_dir(parent)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def mean_ci(samples: ArrayLike, level: float = 0.95) -> Tuple[float, float, Tuple[float, float]]:
    """Sample mean, standard error and a Student-t confidence interval.

    Args:
        samples: One value per independent run
        level: Confidence level

    Returns:
        (mean, standard error, (low, high)); a single sample gives a zero-width interval
    """
    arr = np.atleast_1d(np.asarray(samples, dtype=float))
    n = arr.size
    mean = float(np.mean(arr))
    if n < 2:
        return mean, 0.0, (mean, mean)
    se = float(np.std(arr, ddof=1) / np.sqrt(n))
    half = float(stats.t.ppf(0.5 + level / 2.0, n - 1)) * se
    return mean, se, (mean - half, mean + half)


def max_workers(default: int = 1) -> int:
    """Worker cap from CAV_VOI_MAX_WORKERS.

    Raises:
        ValidationError: If the variable is set but not a positive integer
    """
    raw = os.environ.get(MAX_WORKERS_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError as e:
        raise ValidationError(f"{MAX_WORKERS_ENV} must be an integer, got {raw!r}") from e
    if value < 1:
        raise ValidationError(f"{MAX_WORKERS_ENV} must be >= 1, got {value}")
    return value
