"""Smooth random action sequences from cubic splines through random knots."""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline


def num_knots(length: int) -> int:
    return max(2, length // 10 + 1)


def spline_through(knots: np.ndarray, length: int) -> np.ndarray:
    """Evaluate a cubic interpolant of ``knots`` (K, A) at ``length`` evenly spaced steps."""
    if length == 1:
        return knots[:1].copy()
    x = np.linspace(0.0, length - 1, len(knots))
    return CubicSpline(x, knots, axis=0)(np.arange(length))


def random_controls(num_actuators: int, length: int, seed) -> np.ndarray:
    """``(length, num_actuators)`` actions in [-1, 1]; ``seed`` may be an int or a Generator."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    knots = rng.uniform(-1.0, 1.0, size=(num_knots(length), num_actuators))
    return np.clip(spline_through(knots, length), -1.0, 1.0)
