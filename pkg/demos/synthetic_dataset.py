"""
Synthetic annotations, split and statistics
===========================================

Generate a corpus with the default category mix, split it 70/30 with rare-class protection
and print category shares and caption lengths.
"""

from groundcap import SyntheticSpec, compute_stats, gen_synthetic_dataset, stratified_split
from groundcap.dataset import CATEGORIES, CATEGORY_PERCENT

samples, _ = gen_synthetic_dataset(SyntheticSpec(1000, seed=0), shape=None)
print(samples[0].image_id, "|", samples[0].caption)

train, test = stratified_split(samples, ratio=0.7, seed=0)
print(f"train {len(train)}  test {len(test)}  ratio {len(train) / len(samples):.3f}")

stats = compute_stats(train + test)
print(f"\n{'category':24s} {'target':>7s} {'drawn':>7s}")
for c, pct in zip(CATEGORIES, CATEGORY_PERCENT):
    print(f"{c:24s} {pct:6.1f}% {100 * stats.proportions[c]:6.1f}%")

print("\ncaption length buckets:", dict(sorted(stats.caption_length_hist.items())))
print("top words:", stats.top_words[:8])
