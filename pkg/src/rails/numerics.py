"""Deterministic numeric primitives: affinity scoring and named random streams.

Affinity between two points under a feature map F is the negated Euclidean
distance of their images, -||F(x1) - F(x2)||_2.  Larger is closer; the value
is 0 exactly when the images coincide.

Randomness is counter-based.  Every consumer asks for a stream by
(seed, query, purpose) and gets an independent generator; no global state,
no draw-order coupling between queries or between purposes.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

from .errors import ConfigError

_U32 = 0xFFFFFFFF
_U64 = 0xFFFFFFFFFFFFFFFF


def affinity(feature_map: Callable[[np.ndarray], np.ndarray],
             x1: np.ndarray, x2: np.ndarray) -> float:
    """Affinity of x1 and x2 under feature_map: -||F(x1) - F(x2)||_2.

    feature_map must return equal-shape finite arrays for both inputs.
    """
    f1 = np.asarray(feature_map(np.asarray(x1, dtype=np.float64)), dtype=np.float64)
    f2 = np.asarray(feature_map(np.asarray(x2, dtype=np.float64)), dtype=np.float64)
    if f1.shape != f2.shape:
        raise ValueError(f"feature shapes differ: {f1.shape} vs {f2.shape}")
    if not (np.all(np.isfinite(f1)) and np.all(np.isfinite(f2))):
        raise ValueError("feature map produced non-finite values")
    return -float(np.linalg.norm(f1 - f2))


def affinities_to_point(features: np.ndarray, fx: np.ndarray) -> np.ndarray:
    """Affinity of each row of `features` to the single feature vector `fx`."""
    features = np.asarray(features, dtype=np.float64)
    fx = np.asarray(fx, dtype=np.float64)
    return -np.linalg.norm(features - fx[None, :], axis=1)


def derive_stream(seed: int, query: int, purpose: str) -> np.random.Generator:
    """Independent generator keyed by (seed, query index, purpose tag).

    The tag is hashed so distinct purposes can never collide into the same
    stream; the same triple always yields the same draw sequence.
    """
    if not isinstance(purpose, str) or not purpose:
        raise ConfigError("stream purpose must be a non-empty string")
    tag = int.from_bytes(
        hashlib.blake2s(purpose.encode("utf-8"), digest_size=4).digest(), "little")
    ss = np.random.SeedSequence(
        entropy=int(seed) & _U64,
        spawn_key=(int(query) & _U64, tag & _U32))
    return np.random.Generator(np.random.Philox(ss))
