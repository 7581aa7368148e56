"""Small argument checks used at public entry points."""

from __future__ import annotations

import math
import numbers

import numpy as np


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_probability(value, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0 or math.isnan(value):
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_nonnegative(value, name: str) -> float:
    value = float(value)
    if not value >= 0.0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value


def check_finite(value, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


def check_random_state(seed) -> np.random.Generator:
    """Turn a seed, SeedSequence or Generator into a Generator.

    ``None`` is rejected: every stochastic entry point needs an explicit seed.
    """
    if seed is None:
        raise ValueError("an explicit seed is required")
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_seed(seed, *path: int) -> np.random.SeedSequence:
    """Child seed for a position in a grid (cell index, trial, round...)."""
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
        path = tuple(seed.spawn_key) + path
        return np.random.SeedSequence(entropy, spawn_key=path)
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
