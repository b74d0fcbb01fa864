"""Input validation helpers used by the estimators.

These wrap :mod:`sklearn.utils.validation` so that arrays coming from user
code are converted and checked the same way everywhere.
"""
import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigError


def check_embedding_values(values, *, name="embedding", dtype=np.float64):
    """Return `values` as a finite 2-D float array."""
    return check_array(
        values,
        dtype=dtype,
        ensure_2d=True,
        ensure_all_finite=True,
        ensure_min_samples=1,
        input_name=name,
    )


def check_indices(indices, n_rows, *, name="indices"):
    idx = np.asarray(indices)
    if idx.ndim == 0:
        idx = idx.reshape(1)
    if idx.size and not np.issubdtype(idx.dtype, np.integer):
        raise TypeError(f"{name} must be integers, got {idx.dtype}")
    idx = idx.astype(np.int64, copy=False)
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise IndexError(f"{name} out of range for {n_rows} rows")
    return idx


def check_positive(value, field, *, strict=True, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(field, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    if not np.isfinite(value):
        raise ConfigError(field, f"must be finite, got {value!r}")
    if strict and value <= 0:
        raise ConfigError(field, f"must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ConfigError(field, f"must be >= 0, got {value!r}")
    return value


def check_at_least(value, field, minimum):
    check_positive(value, field, strict=False, integer=True)
    if value < minimum:
        raise ConfigError(field, f"must be >= {minimum}, got {value!r}")
    return value


def check_fraction(value, field, *, low_open=True, high_open=False):
    check_positive(value, field, strict=False)
    too_low = value <= 0 if low_open else value < 0
    too_high = value >= 1 if high_open else value > 1
    if too_low or too_high:
        lo = "(" if low_open else "["
        hi = ")" if high_open else "]"
        raise ConfigError(field, f"must lie in {lo}0, 1{hi}, got {value!r}")
    return value


def make_rng(random_state):
    """numpy Generator from an int seed, a SeedSequence, or an existing Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)


def derive_seed(seed, *keys):
    """Deterministic 32-bit seed derived from `seed` and integer `keys`."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
