"""COCO-style detection metrics: per-slice AP and the mAP / mAP@50 / mAP@75 triple."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from ..geometry import as_xyxy, iou

RECALL_GRID = np.arange(101) / 100
IOU_THRESHOLDS = tuple((50 + 5 * k) / 100 for k in range(10))


@dataclass(frozen=True)
class Detection:
    image_id: str
    bbox: tuple[float, float, float, float]
    category: str
    score: float

    def __post_init__(self):
        object.__setattr__(self, "bbox", as_xyxy(self.bbox))
        if not math.isfinite(self.score):
            raise ValidationError(f"non-finite score for detection on {self.image_id}")

    @property
    def xyxy(self):
        return self.bbox


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    bbox: tuple[float, float, float, float]
    category: str = ""

    def __post_init__(self):
        object.__setattr__(self, "bbox", as_xyxy(self.bbox))

    @property
    def xyxy(self):
        return self.bbox


@dataclass(frozen=True)
class DetectionScores:
    map: float
    map50: float
    map75: float

    def to_csv(self) -> str:
        return f"map,map50,map75\n{self.map:.4f},{self.map50:.4f},{self.map75:.4f}\n"

    def to_text(self) -> str:
        return f"detection metrics (x100)\n  mAP      {self.map:8.2f}\n  mAP@50   {self.map50:8.2f}\n  mAP@75   {self.map75:8.2f}\n"


def ground_truths(samples) -> list[GroundTruth]:
    return [GroundTruth(s.image_id, b.xyxy, b.category) for s in samples for b in s.boxes]


def average_precision(dets: Sequence[Detection], gts: Sequence[GroundTruth], iou_thresh: float) -> float:
    """101-point interpolated AP for one category slice; 0.0 when there are no ground truths.

    Detections are visited in descending score order (stable for ties); each
    claims the unmatched ground truth of its image with the highest IoU, if
    that IoU reaches the threshold.
    """
    if not gts:
        return 0.0
    by_image: dict[str, list[int]] = {}
    for k, g in enumerate(gts):
        by_image.setdefault(g.image_id, []).append(k)
    taken = [False] * len(gts)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        d = dets[i]
        best, best_k = -1.0, -1
        for k in by_image.get(d.image_id, ()):
            if not taken[k]:
                v = iou(d.bbox, gts[k].bbox)
                if v > best:
                    best, best_k = v, k
        if best_k >= 0 and best >= iou_thresh:
            taken[best_k] = True
            tp[rank] = 1
    if not len(order):
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / len(gts)
    precision = ctp / np.arange(1, len(order) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    interp = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(interp.mean())


def mean_ap(dets: Sequence[Detection], gts: Sequence[GroundTruth], categories: Sequence[str]) -> DetectionScores:
    """Category mean of AP averaged over IoU 0.50:0.05:0.95, plus AP at 0.50 and 0.75.

    Categories without ground truth are left out of every mean.  Reported x100.
    """
    per_cat = []
    for c in categories:
        g = [x for x in gts if x.category == c]
        if not g:
            continue
        d = [x for x in dets if x.category == c]
        aps = {t: average_precision(d, g, t) for t in IOU_THRESHOLDS}
        per_cat.append((np.mean(list(aps.values())), aps[0.5], aps[0.75]))
    if not per_cat:
        return DetectionScores(0.0, 0.0, 0.0)
    arr = np.array(per_cat)
    m, m50, m75 = (100.0 * float(v) for v in arr.mean(axis=0))
    return DetectionScores(m, m50, m75)
