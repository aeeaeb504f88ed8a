"""
Feature adapter, one stage at a time
====================================

Push one synthetic grounding bundle through compression, integration,
fusion and projection, printing shapes and a few sanity numbers.
"""

import torch

from groundcap import AdapterConfig, FeatureAdapter, FeatureShape, GroundingRequest, generate_features
from groundcap.adapter import compress_tokens, fuse, integrate_tokens, project

req = GroundingRequest("demo-0", "construction debris. brick pile. brick pile", seed=0, scene="scene: roadside")
bundle = generate_features(req, FeatureShape())
print("f_img", bundle.f_img.shape, "f_query", bundle.f_query.shape, "f_decoder", bundle.f_decoder.shape)

model = FeatureAdapter(AdapterConfig(), generator=torch.Generator().manual_seed(0))
f_img, f_q, f_d = (torch.from_numpy(a) for a in bundle.arrays())

# 64 query rows -> 32 tokens; each token is a convex mix of rows
fq, w = compress_tokens(model.t_query, f_q, return_weights=True)
print("compressed query", tuple(fq.shape), "row sums in", (w.sum(-1).min().item(), w.sum(-1).max().item()))
fd = compress_tokens(model.t_decoder, f_d)

f_cat = integrate_tokens(f_img, fq, fd)
print("integrated", tuple(f_cat.shape))

with torch.no_grad():
    f_fuse = fuse(f_cat, model.blocks)
    out = project(f_fuse, model.projection)
print("fused", tuple(f_fuse.shape), "-> LM prefix", tuple(out.shape))

# fusion has no positional encoding, so permuting tokens permutes outputs
perm = torch.randperm(32, generator=torch.Generator().manual_seed(1))
with torch.no_grad():
    gap = (fuse(f_cat[perm], model.blocks) - f_fuse[perm]).abs().max().item()
print(f"max deviation under token permutation: {gap:.2e}")

n_params = sum(p.numel() for p in model.parameters())
print(f"{n_params} trainable parameters, checkpoint {len(model.to_bytes())} bytes")
