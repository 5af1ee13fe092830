"""Linear interpolation matrices for resampling token grids and score maps."""

from __future__ import annotations

import math

import numpy as np


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) 1-D linear interpolation matrix, half-pixel centres, edge-clamped."""
    R = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = min(max((i + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        w = src - lo
        R[i, lo] += 1.0 - w
        R[i, hi] += w
    return R


def grid_resampler(g_in: int, g_out: int) -> np.ndarray:
    """(g_out^2, g_in^2) bilinear resampling of a raster-ordered token grid."""
    R = interp_matrix(g_in, g_out)
    return np.kron(R, R)


def resample_maps(maps: np.ndarray, g_out: int) -> np.ndarray:
    """Bilinearly resample (..., g, g) maps to (..., g_out, g_out)."""
    R = interp_matrix(maps.shape[-1], g_out)
    return R @ maps @ R.T
