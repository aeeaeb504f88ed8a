"""Annotation schema, JSONL I/O, stratified splitting, statistics and synthetic data."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .adapter import FeatureBundle
from .errors import StratificationError, ValidationError
from .grounding import FeatureShape, GroundingRequest, _rng, generate_features
from .text import tokenize

CATEGORIES = (
    "illegally parked vehicle",
    "construction debris",
    "construction fencing",
    "brick pile",
    "aggregate pile",
    "construction worker",
    "ground litter",
    "overflowing trash bin",
    "scaffolding",
)

# Reference instance shares (percent), in CATEGORIES order; they add up to 100.1.
CATEGORY_PERCENT = (7.2, 34.0, 18.5, 2.0, 6.3, 9.1, 18.8, 0.3, 3.9)
CATEGORY_MIX = tuple(p / sum(CATEGORY_PERCENT) for p in CATEGORY_PERCENT)

PATCH_SIZE = 512
SPLITS = ("train", "test", "unassigned")


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    category: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValidationError(f"unknown category {self.category!r}; the category set is closed: {CATEGORIES}")
        if not all(math.isfinite(v) for v in self.xyxy):
            raise ValidationError(f"non-finite box {self.xyxy}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"degenerate box {self.xyxy}")

    @property
    def xyxy(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Sample:
    image_id: str
    image_ref: str
    boxes: tuple[BBox, ...]
    caption: str
    width: int = PATCH_SIZE
    height: int = PATCH_SIZE
    split: str = "unassigned"

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be nonempty")
        if self.split not in SPLITS:
            raise ValidationError(f"{self.image_id}: unknown split {self.split!r}")
        if not self.caption.strip():
            raise ValidationError(f"{self.image_id}: empty caption")
        if not self.boxes:
            raise ValidationError(f"{self.image_id}: sample has no boxes")
        for b in self.boxes:
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise ValidationError(f"{self.image_id}: box {b.xyxy} outside {self.width}x{self.height} image")

    @property
    def categories(self) -> set[str]:
        return {b.category for b in self.boxes}


def _num(v):
    """Floats with integral values are written as ints, so files stay readable and canonical."""
    v = float(v)
    return int(v) if v.is_integer() else v


def sample_to_json(s: Sample) -> str:
    obj = {
        "image_id": s.image_id,
        "image_ref": s.image_ref,
        "width": s.width,
        "height": s.height,
        "boxes": [{"bbox": [_num(v) for v in b.xyxy], "category": b.category} for b in s.boxes],
        "caption": s.caption,
    }
    if s.split != "unassigned":
        obj["split"] = s.split
    return json.dumps(obj, ensure_ascii=False)


def sample_from_json(obj: dict) -> Sample:
    try:
        image_id = obj["image_id"]
        boxes = []
        for b in obj["boxes"]:
            coords = [float(v) for v in b["bbox"]]
            if len(coords) != 4:
                raise ValidationError(f"{image_id}: bbox needs 4 coordinates, got {len(coords)}")
            try:
                boxes.append(BBox(*coords, category=b["category"]))
            except ValidationError as exc:
                raise ValidationError(f"{image_id}: {exc}") from None
        return Sample(
            image_id=image_id,
            image_ref=obj.get("image_ref", ""),
            boxes=tuple(boxes),
            caption=obj["caption"],
            width=int(obj.get("width", PATCH_SIZE)),
            height=int(obj.get("height", PATCH_SIZE)),
            split=obj.get("split", "unassigned"),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"missing or malformed field {exc}") from None


def load_annotations(path) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                samples.append(sample_from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return samples


def save_annotations(samples: Sequence[Sample], path) -> None:
    Path(path).write_text("".join(sample_to_json(s) + "\n" for s in samples), encoding="utf-8")


def stratified_split(samples: Sequence[Sample], ratio: float = 0.7, seed: int = 0):
    """Image-level split keyed on each image's globally rarest category.

    Every stratum is shuffled with its own seeded stream and cut so the test
    share is rounded up.  A final repair pass moves single images so that each
    category with at least two images appears on both sides.
    """
    if not 0 < ratio < 1:
        raise ValidationError(f"ratio must be in (0, 1), got {ratio}")
    image_counts = Counter(c for s in samples for c in s.categories)
    rare = sorted(c for c, k in image_counts.items() if k < 2)
    if rare:
        raise StratificationError(f"categories with fewer than 2 images cannot be stratified: {rare}")
    rarity = sorted(image_counts, key=lambda c: (image_counts[c], CATEGORIES.index(c)))
    rank = {c: i for i, c in enumerate(rarity)}

    strata: dict[int, list[int]] = {}
    for idx, s in enumerate(samples):
        strata.setdefault(min(rank[c] for c in s.categories), []).append(idx)

    test_idx: set[int] = set()
    for key in sorted(strata):
        members = strata[key]
        order = [members[i] for i in _rng("split", seed, rarity[key]).permutation(len(members))]
        n_test = math.ceil(round((1 - ratio) * len(order), 9))
        if len(order) >= 2:
            n_test = min(n_test, len(order) - 1)
        test_idx.update(order[len(order) - n_test :])

    _repair(samples, test_idx, rarity)
    train = [replace(s, split="train") for i, s in enumerate(samples) if i not in test_idx]
    test = [replace(s, split="test") for i, s in enumerate(samples) if i in test_idx]
    return train, test


def _repair(samples, test_idx: set[int], rarity: list[str]) -> None:
    for _ in range(len(rarity) * 2):
        moved = False
        for cat in rarity:
            for target_is_test in (True, False):
                side = {i for i in range(len(samples)) if (i in test_idx) == target_is_test}
                if any(cat in samples[i].categories for i in side):
                    continue
                other = [i for i in range(len(samples)) if (i in test_idx) != target_is_test]
                donors = [i for i in other if cat in samples[i].categories]
                counts = Counter(c for i in other for c in samples[i].categories)
                safe = [i for i in donors if all(counts[c] >= 2 for c in samples[i].categories)]
                pick = (safe or donors)[-1]
                if target_is_test:
                    test_idx.add(pick)
                else:
                    test_idx.discard(pick)
                moved = True
        if not moved:
            return


@dataclass
class DatasetStats:
    category_counts: dict[str, int]
    proportions: dict[str, float]
    caption_length_hist: dict[int, int]
    top_words: list[tuple[str, int]]
    split_counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["section,key,value"]
        for c in CATEGORIES:
            lines.append(f"category_count,{c},{self.category_counts[c]}")
        for c in CATEGORIES:
            lines.append(f"category_proportion,{c},{self.proportions[c]:.6f}")
        for start, k in sorted(self.caption_length_hist.items()):
            lines.append(f"caption_length,{start}-{start + 9},{k}")
        for w, k in self.top_words:
            lines.append(f"top_word,{w},{k}")
        for split, d in sorted(self.split_counts.items()):
            for key, k in sorted(d.items()):
                lines.append(f"split_{key},{split},{k}")
        return "\n".join(lines) + "\n"


def compute_stats(samples: Sequence[Sample], top_k: int = 50, bucket: int = 10) -> DatasetStats:
    """Instance (box) counts per category, caption-length histogram and word frequencies."""
    if not samples:
        raise ValidationError("no samples")
    counts = Counter(b.category for s in samples for b in s.boxes)
    total = sum(counts.values())
    words = Counter()
    hist = Counter()
    splits: dict[str, dict[str, int]] = {}
    for s in samples:
        toks = tokenize(s.caption)
        words.update(toks)
        hist[(len(toks) // bucket) * bucket] += 1
        d = splits.setdefault(s.split, {"images": 0, "boxes": 0})
        d["images"] += 1
        d["boxes"] += len(s.boxes)
    return DatasetStats(
        category_counts={c: counts[c] for c in CATEGORIES},
        proportions={c: counts[c] / total for c in CATEGORIES},
        caption_length_hist=dict(sorted(hist.items())),
        top_words=sorted(words.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k],
        split_counts=splits,
    )


# Synthetic data ---------------------------------------------------------------

ZONES = ("north gate", "main road", "river bank", "school yard", "market square", "parking lot")
ACTIONS = {
    "illegally parked vehicle": "issue a parking notice",
    "construction debris": "clear the debris",
    "construction fencing": "inspect the fence",
    "brick pile": "cover the bricks",
    "aggregate pile": "cover the aggregate",
    "construction worker": "check safety gear",
    "ground litter": "send a sanitation crew",
    "overflowing trash bin": "empty the bin",
    "scaffolding": "inspect the scaffolding",
}
COUNT_WORDS = ("zero", "one", "two", "three", "four", "five", "six")


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int
    category_mix: tuple[float, ...] = CATEGORY_MIX
    seed: int = 0
    max_boxes: int = 3

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")
        mix = np.asarray(self.category_mix, dtype=float)
        if mix.shape != (len(CATEGORIES),) or (mix < 0).any() or abs(mix.sum() - 1) > 1e-6:
            raise ValidationError(f"category_mix must be {len(CATEGORIES)} non-negative shares summing to 1")
        if not 1 <= self.max_boxes < len(COUNT_WORDS):
            raise ValidationError(f"max_boxes must be in [1, {len(COUNT_WORDS) - 1}]")


def synthetic_caption(counts: dict[str, int], zone: str) -> str:
    clauses = [
        f"{COUNT_WORDS[counts[c]]} {c} near the {zone}; recommend {ACTIONS[c]}"
        for c in CATEGORIES
        if counts.get(c)
    ]
    return "; ".join(clauses) + "."


def scene_of(sample: Sample) -> str:
    """Scene tag carried in a synthetic ``image_ref`` (``synthetic:<seed>:<index>:<zone>``)."""
    parts = sample.image_ref.split(":", 3)
    return parts[3] if parts[0] == "synthetic" and len(parts) == 4 else ""


def grounding_request(sample: Sample, seed: int = 0) -> GroundingRequest:
    """Prompt with one phrase per box, categories in canonical order."""
    cats = sorted((b.category for b in sample.boxes), key=CATEGORIES.index)
    return GroundingRequest(sample.image_id, " . ".join(cats), seed=seed, scene=scene_of(sample))


def sample_features(sample: Sample, shape: FeatureShape = FeatureShape(), seed: int = 0) -> FeatureBundle:
    return generate_features(grounding_request(sample, seed), shape)


def gen_synthetic_dataset(spec: SyntheticSpec, shape: FeatureShape | None = FeatureShape()):
    """Template-captioned samples and, unless ``shape`` is None, their feature bundles.

    Each box draws its category independently from the mix, so instance
    shares converge to the mix.  Sample ``i`` depends only on ``(seed, i)``.
    """
    mix = np.asarray(spec.category_mix, dtype=float)
    samples = []
    for i in range(spec.n_samples):
        rng = _rng("synthetic", spec.seed, i)
        n_boxes = int(rng.integers(1, spec.max_boxes + 1))
        cats = [CATEGORIES[k] for k in rng.choice(len(CATEGORIES), size=n_boxes, p=mix)]
        zone = ZONES[int(rng.integers(len(ZONES)))]
        boxes = []
        for c in cats:
            w, h = (int(v) for v in rng.integers(16, 129, size=2))
            x0 = int(rng.integers(0, PATCH_SIZE - w + 1))
            y0 = int(rng.integers(0, PATCH_SIZE - h + 1))
            boxes.append(BBox(x0, y0, x0 + w, y0 + h, c))
        samples.append(
            Sample(
                image_id=f"syn{spec.seed}_{i:05d}",
                image_ref=f"synthetic:{spec.seed}:{i}:{zone}",
                boxes=tuple(boxes),
                caption=synthetic_caption(Counter(cats), zone),
            )
        )
    if shape is None:
        return samples, None
    return samples, [sample_features(s, shape, spec.seed) for s in samples]
