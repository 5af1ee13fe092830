"""Center-size boxes in normalized coordinates and plain-numpy box geometry."""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np


@dataclass(frozen=True)
class NormBox:
    """Box as (center x, center y, width, height), normalized to a square frame."""

    cx: float
    cy: float
    w: float
    h: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "NormBox":
        a = np.asarray(a, dtype=np.float64).reshape(4)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def is_valid(self) -> bool:
        return 0 <= self.cx <= 1 and 0 <= self.cy <= 1 and 0 < self.w <= 1 and 0 < self.h <= 1


def to_corners(b: np.ndarray) -> np.ndarray:
    """(..., 4) center-size -> (..., 4) x0, y0, x1, y1."""
    b = np.asarray(b, dtype=np.float64)
    half = b[..., 2:] / 2
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise IoU of two (..., 4) center-size box arrays."""
    ca, cb = to_corners(a), to_corners(b)
    iw = np.clip(np.minimum(ca[..., 2], cb[..., 2]) - np.maximum(ca[..., 0], cb[..., 0]), 0, None)
    ih = np.clip(np.minimum(ca[..., 3], cb[..., 3]) - np.maximum(ca[..., 1], cb[..., 1]), 0, None)
    inter = iw * ih
    area_a = (ca[..., 2] - ca[..., 0]) * (ca[..., 3] - ca[..., 1])
    area_b = (cb[..., 2] - cb[..., 0]) * (cb[..., 3] - cb[..., 1])
    union = area_a + area_b - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)
    return out
