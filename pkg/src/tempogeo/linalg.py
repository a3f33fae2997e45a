"""Batched det/solve with closed forms for the small sizes that dominate."""

from __future__ import annotations

import numpy as np


def det(a: np.ndarray) -> np.ndarray:
    d = a.shape[-1]
    if d == 1:
        return a[..., 0, 0]
    if d == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return np.linalg.det(a)


def solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a⁻¹ b for b of shape (..., d, k)."""
    if a.shape[-1] == 1:
        return b / a[..., :1, :1]
    return np.linalg.solve(a, b)


def solve_vec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """a⁻¹ v for v of shape (..., d)."""
    return solve(a, v[..., None])[..., 0]
