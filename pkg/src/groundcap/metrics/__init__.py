from .caption import CaptionScores, bleu, cider_d, evaluate_captions, meteor, rouge_l
from .detection import (
    Detection,
    DetectionScores,
    GroundTruth,
    average_precision,
    mean_ap,
)
from ..geometry import iou

__all__ = [
    "CaptionScores",
    "Detection",
    "DetectionScores",
    "GroundTruth",
    "average_precision",
    "bleu",
    "cider_d",
    "evaluate_captions",
    "iou",
    "mean_ap",
    "meteor",
    "rouge_l",
]
