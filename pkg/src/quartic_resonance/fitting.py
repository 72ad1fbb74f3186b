"""Shared least-squares helpers."""

from __future__ import annotations

import numpy as np


def linear_fit(x: np.ndarray, y: np.ndarray):
    """Least-squares line y = a*x + b; returns (slope, intercept, rms_residual)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points for a linear fit")
    a = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2)))
