"""
Cross-checking human boxes and building prompts
===============================================

Jitter every box of a few synthetic samples to mimic a detector, flag boxes
whose best same-category IoU falls below 0.5, then render the structured
prompt for the first sample.
"""

import numpy as np

from groundcap import SyntheticSpec, build_structured_prompt, cross_verify, gen_synthetic_dataset
from groundcap.metrics import Detection

samples, _ = gen_synthetic_dataset(SyntheticSpec(20, seed=2), shape=None)
rng = np.random.default_rng(0)
preds = []
for s in samples:
    for b in s.boxes:
        dx, dy = rng.normal(0, 8, 2)
        preds.append(Detection(s.image_id, (b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy), b.category, 1.0))

for t in (0.3, 0.5, 0.7):
    print(f"threshold {t}: {len(cross_verify(samples, preds, t))} boxes sent back")

for f in cross_verify(samples, preds)[:3]:
    print(f.image_id, f.human_box.category, f"{f.best_iou:.3f}", f.reason)

prompt = build_structured_prompt(samples[0], "Materials may not block pedestrian paths.")
print()
print(prompt.text)
