"""Pre-norm transformer block shared by the adapter fusion stack and the LM stub."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

INIT_STD = 0.02


def init_linear(layer: nn.Linear) -> nn.Linear:
    nn.init.normal_(layer.weight, std=INIT_STD)
    nn.init.zeros_(layer.bias)
    return layer


class SelfAttention(nn.Module):
    """Multi-head scaled dot-product self-attention, optionally causal."""

    def __init__(self, width: int, heads: int, causal: bool = False):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.causal = causal
        self.qkv = init_linear(nn.Linear(width, 3 * width))
        self.out = init_linear(nn.Linear(width, width))

    def attention_weights(self, x: torch.Tensor) -> torch.Tensor:
        """Per-head attention weights, shape (..., heads, n, n)."""
        q, k, _ = self._split(x)
        return self._weights(q, k)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = self._split(x)
        w = self._weights(q, k)
        y = w @ v  # (..., h, n, d)
        y = y.transpose(-3, -2).reshape(*x.shape)
        return self.out(y)

    def _split(self, x):
        *lead, n, _ = x.shape
        d = self.width // self.heads
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        return tuple(t.reshape(*lead, n, self.heads, d).transpose(-3, -2) for t in (q, k, v))

    def _weights(self, q, k):
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(q.shape[-1])
        if self.causal:
            n = scores.shape[-1]
            mask = torch.ones(n, n, dtype=torch.bool, device=scores.device).triu(1)
            scores = scores.masked_fill(mask, float("-inf"))
        return scores.softmax(dim=-1)


class TransformerBlock(nn.Module):
    """x + attn(LN(x)), then x + MLP(LN(x)) with a 4x GELU feed-forward."""

    def __init__(self, width: int, heads: int, causal: bool = False):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = SelfAttention(width, heads, causal=causal)
        self.ln2 = nn.LayerNorm(width)
        self.fc1 = init_linear(nn.Linear(width, 4 * width))
        self.fc2 = init_linear(nn.Linear(4 * width, width))

    @property
    def width(self) -> int:
        return self.attn.width

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x))))


def reset_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Seeded init: N(0, 0.02) weights, embeddings and free parameters; zero biases; unit norm gains."""

    def normal(p):
        return torch.randn(p.shape, generator=generator, dtype=torch.float64).to(p.dtype) * INIT_STD

    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, nn.LayerNorm):
                sub.weight.fill_(1.0)
                sub.bias.zero_()
            elif isinstance(sub, nn.Linear):
                sub.weight.copy_(normal(sub.weight))
                sub.bias.zero_()
            elif isinstance(sub, nn.Embedding):
                sub.weight.copy_(normal(sub.weight))
            for p in sub.parameters(recurse=False):
                if not isinstance(sub, (nn.LayerNorm, nn.Linear, nn.Embedding)):
                    p.copy_(normal(p))
