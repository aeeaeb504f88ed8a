"""Axis-aligned box geometry.

This is the only IoU code path in the package; annotation verification and
detection metrics both call :func:`iou`.
"""

import math
from typing import Sequence

from .errors import ValidationError


def as_xyxy(box) -> tuple[float, float, float, float]:
    """Coerce a box-like object (``.xyxy`` attribute or 4-sequence) to floats."""
    coords = box.xyxy if hasattr(box, "xyxy") else box
    if len(coords) != 4:
        raise ValidationError(f"box must have 4 coordinates, got {len(coords)}")
    x0, y0, x1, y1 = (float(v) for v in coords)
    if not all(math.isfinite(v) for v in (x0, y0, x1, y1)):
        raise ValidationError(f"non-finite box {coords!r}")
    if not (x0 < x1 and y0 < y1):
        raise ValidationError(f"degenerate box {coords!r}")
    return x0, y0, x1, y1


def area(box) -> float:
    x0, y0, x1, y1 = as_xyxy(box)
    return (x1 - x0) * (y1 - y0)


def iou(a, b) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ax0, ay0, ax1, ay1 = as_xyxy(a)
    bx0, by0, bx1, by1 = as_xyxy(b)
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def raster_key(box: Sequence[float]) -> tuple[float, float, float, float]:
    """Sort key for top-left raster order (rows first, then columns)."""
    x0, y0, x1, y1 = as_xyxy(box)
    return (y0, x0, y1, x1)
