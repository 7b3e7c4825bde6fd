"""Image similarity metrics and difference images."""
from __future__ import annotations

import numpy as np

from .grid import Grid2D

__all__ = ["soft_dice", "binary_dice", "difference_image", "five_number_summary"]

_RANGE_TOL = 1e-6


def _values(a):
    return a.values if isinstance(a, Grid2D) else np.asarray(a)


def _pair(a, b, name):
    a, b = _values(a).astype(np.float64), _values(b).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def soft_dice(a, b) -> float:
    """Soft Sørensen-Dice ``2 sum(a b) / (sum a^2 + sum b^2)`` on [0, 1] images.

    Two all-zero images score 1.0.
    """
    a, b = _pair(a, b, "soft_dice")
    for arr in (a, b):
        if arr.size and (arr.min() < -_RANGE_TOL or arr.max() > 1 + _RANGE_TOL):
            raise ValueError("soft_dice expects inputs normalised to [0, 1]")
    denom = np.sum(a * a) + np.sum(b * b)
    if denom == 0:
        return 1.0
    return float(2.0 * np.sum(a * b) / denom)


def binary_dice(a, b, threshold=0.5) -> float:
    """Set-overlap Dice of the masks ``a >= threshold`` and ``b >= threshold``."""
    a, b = _pair(a, b, "binary_dice")
    ma, mb = a >= threshold, b >= threshold
    total = int(ma.sum()) + int(mb.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / total


def difference_image(pred, truth):
    """Signed ``pred - truth``; a :class:`Grid2D` when given grids."""
    p, t = _pair(pred, truth, "difference_image")
    diff = (p - t).astype(np.float32)
    if isinstance(pred, Grid2D):
        return Grid2D(diff, dx=pred.dx)
    return diff


def five_number_summary(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("five-number summary of an empty sample")
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return {"min": float(q[0]), "q1": float(q[1]), "median": float(q[2]), "q3": float(q[3]), "max": float(q[4])}
