"""Input validation helpers shared by the estimators and free functions."""

from __future__ import annotations

import numpy as np


class ContractError(ValueError):
    """Raised when array shapes or values violate an operation contract."""


class ConfigError(ValueError):
    """Raised for invalid or mutually inconsistent configuration values."""


class NumericError(FloatingPointError):
    """Raised when a computation produces non-finite values."""


def as_float_array(x, name="array", ndim=None, dtype=np.float64, allow_empty=False):
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim not in np.atleast_1d(ndim):
        raise ContractError(f"{name}: expected ndim {ndim}, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ContractError(f"{name}: empty input")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name}: contains non-finite values")
    return arr


def check_config(x, name="config", d=None):
    """Validate a single ``N x D`` particle configuration."""
    arr = as_float_array(x, name=name, ndim=2)
    if d is not None and arr.shape[1] != d:
        raise ContractError(f"{name}: expected {d} coordinates, got {arr.shape[1]}")
    return arr


def check_batch(x, name="batch", d=None):
    """Validate an ``S x N x D`` batch; a bare ``N x D`` config is promoted to S=1."""
    arr = as_float_array(x, name=name, ndim=(2, 3))
    if arr.ndim == 2:
        arr = arr[None]
    if d is not None and arr.shape[2] != d:
        raise ContractError(f"{name}: expected {d} coordinates, got {arr.shape[2]}")
    return arr


def check_unit(v, name="vector", tol=1e-6):
    v = as_float_array(v, name=name)
    norms = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ContractError(f"{name}: expected unit vectors within {tol}, got norms {norms.min():.6g}..{norms.max():.6g}")
    return v


def check_time(t, upper_open=False):
    t = float(t)
    if not np.isfinite(t) or t < 0.0 or t > 1.0 or (upper_open and t >= 1.0):
        raise ContractError(f"time {t} outside the admissible range")
    return t


def check_random_state(seed):
    """Return a ``numpy.random.Generator`` for ``seed`` (int, Generator or None)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sub_rng(seed, *stream):
    """Counter-based generator for an independent sub-stream ``(seed, *stream)``.

    Philox is keyed by the seed sequence so that per-sample streams are reproducible
    no matter which worker or in which order they are drawn.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))
