"""
Training the adapter against a frozen language model
====================================================

Pretrain the tiny LM on a disjoint caption corpus, freeze it, then fit the
adapter to 8 samples and decode them greedily.  Takes well under a minute
on a laptop CPU.
"""

import time

from groundcap import SyntheticSpec, TrainConfig, TrainItem, gen_synthetic_dataset, prepare_lm, train_adapter
from groundcap.training import caption_bundles

samples, bundles = gen_synthetic_dataset(SyntheticSpec(8, seed=3))
corpus, _ = gen_synthetic_dataset(SyntheticSpec(1000, seed=100), shape=None)

t0 = time.perf_counter()
vocab, lm = prepare_lm([s.caption for s in corpus + samples], prefix_len=32)
print(f"LM ready ({len(vocab)} words) in {time.perf_counter() - t0:.1f}s, frozen={lm.frozen}")

items = [TrainItem(b, tuple(vocab.encode(s.caption))) for s, b in zip(samples, bundles)]
cfg = TrainConfig(batch_size=8, lr=1e-3, max_epochs=200, lr_milestones=(120, 170))
model, log = train_adapter(cfg, items, lm)
print("loss every 40 epochs:", [round(x, 4) for x in log.losses[::40]], "final", round(log.losses[-1], 4))
print("freeze audit:", log.freeze.changed)

for s, ids in zip(samples, caption_bundles(model, lm, bundles)):
    out = vocab.decode(ids)
    print("ok " if out == vocab.decode(vocab.encode(s.caption)) else "-- ", out)
