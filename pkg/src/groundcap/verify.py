"""Machine side of the annotation pipeline: IoU cross-verification and structured prompts."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .dataset import BBox, Sample
from .errors import ValidationError
from .geometry import iou, raster_key
from .metrics.detection import Detection

DEFAULT_THRESHOLD = 0.5
REASONS = ("low_iou", "unmatched")


@dataclass(frozen=True)
class VerificationFlag:
    image_id: str
    human_box: BBox
    best_iou: float
    matched_pred: Detection | None
    reason: str

    def to_dict(self) -> dict:
        b = self.human_box
        pred = self.matched_pred
        return {
            "image_id": self.image_id,
            "human_box": {"bbox": list(b.xyxy), "category": b.category},
            "best_iou": self.best_iou,
            "matched_pred": None if pred is None else {
                "image_id": pred.image_id,
                "bbox": list(pred.bbox),
                "category": pred.category,
                "score": pred.score,
            },
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationFlag":
        hb = d["human_box"]
        p = d["matched_pred"]
        return cls(
            image_id=d["image_id"],
            human_box=BBox(*hb["bbox"], category=hb["category"]),
            best_iou=d["best_iou"],
            matched_pred=None if p is None else Detection(p["image_id"], tuple(p["bbox"]), p["category"], p["score"]),
            reason=d["reason"],
        )


def cross_verify(human: Sequence[Sample], preds: Sequence[Detection],
                 threshold: float = DEFAULT_THRESHOLD) -> list[VerificationFlag]:
    """Flag every human box whose best same-category prediction has IoU below ``threshold``.

    Predictions are not consumed: two human boxes may be validated by the
    same prediction.  Output is ordered by (image_id, best_iou).
    """
    if not 0 < threshold <= 1:
        raise ValidationError(f"threshold must be in (0, 1], got {threshold}")
    by_key: dict[tuple[str, str], list[Detection]] = {}
    for p in preds:
        by_key.setdefault((p.image_id, p.category), []).append(p)
    flags = []
    for s in human:
        for box in s.boxes:
            cands = by_key.get((s.image_id, box.category), [])
            best, match = 0.0, None
            for p in cands:
                v = iou(box, p.bbox)
                if match is None or v > best:
                    best, match = v, p
            if best < threshold:
                flags.append(VerificationFlag(s.image_id, box, best, match, "low_iou" if cands else "unmatched"))
    flags.sort(key=lambda f: (f.image_id, f.best_iou))
    return flags


def export_review_queue(flags: Sequence[VerificationFlag], path) -> None:
    Path(path).write_text("".join(json.dumps(f.to_dict()) + "\n" for f in flags), encoding="utf-8")


def load_review_queue(path) -> list[VerificationFlag]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [VerificationFlag.from_dict(json.loads(x)) for x in lines if x.strip()]


@dataclass(frozen=True)
class StructuredPrompt:
    text: str
    parts: dict[str, str]


def available_templates() -> list[str]:
    files = resources.files("groundcap") / "templates"
    return sorted(p.name[:-4] for p in files.iterdir() if p.name.endswith(".txt"))


def _template(template_id: str) -> str:
    path = resources.files("groundcap") / "templates" / f"{template_id}.txt"
    if not path.is_file():
        raise ValidationError(f"unknown prompt template {template_id!r}; have {available_templates()}")
    return path.read_text(encoding="utf-8")


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


def box_line(b: BBox) -> str:
    return f"{b.category} @ [{', '.join(_fmt(v) for v in b.xyxy)}]"


def build_structured_prompt(sample: Sample, regulations: str, template_id: str = "v1") -> StructuredPrompt:
    """Render the explicit prompt used for caption annotation and the loosely coupled baseline."""
    if not sample.boxes:
        raise ValidationError(f"{sample.image_id}: a prompt needs at least one target box")
    template = _template(template_id)
    head_t, rest = template.split("{box_lines}", 1)
    mid_t, tail_t = rest.split("{regulations}", 1)
    fields = {"width": sample.width, "height": sample.height, "n_boxes": len(sample.boxes)}
    boxes = sorted(sample.boxes, key=lambda b: (*raster_key(b.xyxy), b.category))
    parts = {
        "header": head_t.format(**fields),
        "boxes": "\n".join(f"- {box_line(b)}" for b in boxes),
        "regulations": mid_t.format(**fields) + regulations.strip(),
        "instruction": tail_t.format(**fields),
    }
    return StructuredPrompt(text="".join(parts.values()), parts=parts)
