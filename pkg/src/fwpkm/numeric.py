"""Dense numeric primitives shared by every other module.

Everything here works on the last axis, so a 2-D array is treated as a batch
of vectors. Inputs are not modified.
"""

import numpy as np

from .errors import ArgumentError, DimensionError, NumericError

DEFAULT_DTYPE = np.float64


def as_vec(x, dtype=DEFAULT_DTYPE, name="x"):
    """Convert to a finite 1-D array."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def as_mat(x, dtype=DEFAULT_DTYPE, name="x"):
    """Convert to a finite 2-D array."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def rms_norm(x, gain, eps=1e-5):
    """gain * x / sqrt(mean(x**2) + eps)."""
    x = np.asarray(x)
    gain = np.asarray(gain)
    if x.shape[-1] != gain.shape[-1]:
        raise DimensionError(f"rms_norm: len(x)={x.shape[-1]} != len(gain)={gain.shape[-1]}")
    if eps < 0:
        raise ArgumentError("rms_norm: eps must be non-negative")
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return gain * x / np.sqrt(ms + eps)


def softmax(s):
    s = np.asarray(s)
    if s.ndim == 0 or s.shape[-1] == 0:
        raise DimensionError("softmax of an empty vector")
    z = np.exp(s - np.max(s, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def zscore(x, eps=1e-5):
    """Standardize along the feature axis using the population std."""
    x = np.asarray(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("zscore of an empty vector")
    mu = np.mean(x, axis=-1, keepdims=True)
    sd = np.std(x, axis=-1, keepdims=True)
    return (x - mu) / (sd + eps)


def top_k(s, k):
    """Indices of the k largest entries, by descending score.

    Equal scores keep ascending index order (stable sort on the negated
    scores), which makes the result deterministic.
    """
    s = np.asarray(s)
    n = s.shape[-1]
    if not 1 <= k <= n:
        raise ArgumentError(f"top_k: k={k} outside [1, {n}]")
    return np.argsort(-s, axis=-1, kind="stable")[..., :k]


def entropy(p):
    """Shannon entropy in nats with 0 log 0 = 0."""
    p = np.asarray(p)
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(p * np.log(safe), axis=-1)
