"""A tiny causal decoder LM that reads adapter tokens as prefix context.

The model is a stand-in for a frozen pretrained LLM: it is built, optionally
trained briefly on captions on its own, then frozen.  Adapter training may
only reach it through the prefix.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint
from .errors import ConfigError, ValidationError
from .layers import TransformerBlock, reset_parameters
from .text import tokenize

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocab:
    """Word <-> id map with the four reserved ids 0..3."""

    def __init__(self, words: Sequence[str]):
        self.itos = list(RESERVED) + [w for w in words]
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValidationError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    @property
    def token_to_id(self) -> dict[str, int]:
        return dict(self.stoi)

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(w, UNK) for w in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.itos[i] for i in ids if i not in (PAD, BOS, EOS))

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[:4]) != RESERVED:
            raise ValidationError(f"vocab file {path} does not start with the reserved tokens")
        return cls(lines[4:])


def build_vocab(captions: Sequence[str]) -> Vocab:
    """Ids from 4 upward by (frequency desc, word asc)."""
    if not captions:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    counts = Counter(w for c in captions for w in tokenize(c))
    if not counts:
        raise ValidationError("corpus contains no tokens")
    return Vocab(sorted(counts, key=lambda w: (-counts[w], w)))


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    width: int = 64
    depth: int = 2
    heads: int = 4
    max_positions: int = 128


class TinyLM(nn.Module):
    kind = "lm"

    def __init__(self, config: LMConfig, generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        self.embedding = nn.Embedding(config.vocab_size, config.width)
        self.positions = nn.Parameter(torch.zeros(config.max_positions, config.width))
        self.blocks = nn.ModuleList(
            TransformerBlock(config.width, config.heads, causal=True) for _ in range(config.depth)
        )
        self.ln_f = nn.LayerNorm(config.width)
        self.head = nn.Linear(config.width, config.vocab_size)
        reset_parameters(self, generator if generator is not None else torch.Generator().manual_seed(0))
        self.frozen = False

    def freeze(self) -> "TinyLM":
        self.requires_grad_(False)
        self.eval()
        self.frozen = True
        return self

    def forward(self, prefix: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
        """Logits for every position of ``ids``; ``prefix`` (..., N, width) is never predicted."""
        if prefix.shape[-1] != self.config.width:
            raise ValidationError(f"prefix width {prefix.shape[-1]} != LM width {self.config.width}")
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValidationError(f"token id out of range [0, {self.config.vocab_size})")
        n = prefix.shape[-2]
        total = n + ids.shape[-1]
        if total > self.config.max_positions:
            raise ValidationError(f"sequence of {total} exceeds {self.config.max_positions} positions")
        if prefix.dim() == 2 and ids.dim() == 2:
            prefix = prefix.expand(ids.shape[0], *prefix.shape)
        x = torch.cat([prefix, self.embedding(ids).to(prefix.dtype)], dim=-2)
        x = x + self.positions[:total].to(x.dtype)
        for blk in self.blocks:
            x = blk(x)
        return self.head(self.ln_f(x[..., n:, :]))

    def to_bytes(self) -> bytes:
        return checkpoint.encode(self.kind, asdict(self.config), checkpoint.module_tensors(self))

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TinyLM":
        kind, cfg, tensors = checkpoint.decode(blob)
        if kind != cls.kind:
            raise ValidationError(f"checkpoint holds {kind!r}, expected {cls.kind!r}")
        model = cls(LMConfig(**cfg))
        checkpoint.load_module_tensors(model, tensors)
        return model


def lm_forward(prefix: torch.Tensor, caption_ids, lm: TinyLM) -> torch.Tensor:
    ids = torch.as_tensor(caption_ids, dtype=torch.long)
    return lm(prefix, ids)


def caption_loss(logits: torch.Tensor, target_ids) -> torch.Tensor:
    """Mean token cross-entropy over non-PAD targets; with a batch, mean of per-caption means."""
    targets = torch.as_tensor(target_ids, dtype=torch.long)
    if logits.shape[:-1] != targets.shape:
        raise ValidationError(f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}")
    nll = F.cross_entropy(logits.transpose(-1, -2) if logits.dim() == 3 else logits, targets,
                          ignore_index=PAD, reduction="none")
    keep = (targets != PAD).to(nll.dtype)
    per_caption = (nll * keep).sum(-1) / keep.sum(-1).clamp(min=1)
    return per_caption.mean() if per_caption.dim() else per_caption


def teacher_forcing(ids: Sequence[int]) -> tuple[list[int], list[int]]:
    """(input, target) pair: BOS + ids -> ids + EOS."""
    return [BOS, *ids], [*ids, EOS]


def pad_batch(seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    return torch.tensor([list(s) + [PAD] * (width - len(s)) for s in seqs], dtype=torch.long)


@torch.no_grad()
def generate(prefix: torch.Tensor, lm: TinyLM, max_len: int = 40) -> list[int]:
    """Greedy decoding from BOS; stops at EOS (not returned) or after ``max_len`` tokens."""
    if max_len < 1:
        raise ValidationError("max_len must be >= 1")
    ids = [BOS]
    out = []
    for _ in range(max_len):
        logits = lm(prefix, torch.tensor(ids, dtype=torch.long))[-1]
        nxt = int(torch.argmax(logits))  # first maximal index on ties
        if nxt == EOS:
            break
        out.append(nxt)
        ids.append(nxt)
    return out


def pretrain_lm(lm: TinyLM, captions: Sequence[Sequence[int]], prefix_len: int, epochs: int = 5,
                lr: float = 1e-3, seed: int = 0, batch_size: int = 16) -> list[float]:
    """Briefly fit the LM alone before freezing, so that it learns to read its prefix.

    Each caption is paired with a prefix holding the embeddings of its own
    words in shuffled order (the remaining slots are small noise); the LM must
    reorder them into the caption.  No features or adapter are involved.
    """
    if lm.frozen:
        raise ConfigError("cannot pretrain a frozen LM")
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.AdamW(lm.parameters(), lr=lr)
    pairs = [teacher_forcing(c) for c in captions]
    width = lm.config.width
    losses = []
    lm.train()
    for _ in range(epochs):
        order = torch.randperm(len(pairs), generator=gen).tolist()
        total = 0.0
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            prefix = torch.randn(len(chunk), prefix_len, width, generator=gen) * 0.02
            bag = torch.zeros(len(chunk), prefix_len, dtype=torch.long)
            keep = torch.zeros(len(chunk), prefix_len, 1)
            for row, i in enumerate(chunk):
                words = list(captions[i])[:prefix_len]
                perm = torch.randperm(prefix_len, generator=gen)[: len(words)]
                bag[row, perm] = torch.tensor(words, dtype=torch.long)
                keep[row, perm] = 1.0
            prefix = prefix * (1 - keep) + lm.embedding(bag) * keep
            inp = pad_batch([pairs[i][0] for i in chunk])
            tgt = pad_batch([pairs[i][1] for i in chunk])
            loss = caption_loss(lm(prefix, inp), tgt)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(chunk)
        losses.append(total / len(pairs))
    lm.eval()
    return losses


def prepare_lm(corpus: Sequence[str], prefix_len: int, width: int = 64, depth: int = 2, heads: int = 4,
               max_positions: int = 128, pretrain_epochs: int = 8, seed: int = 0) -> tuple[Vocab, TinyLM]:
    """Vocabulary plus a briefly pretrained, frozen LM for the caption corpus."""
    vocab = build_vocab(corpus)
    lm = TinyLM(LMConfig(len(vocab), width, depth, heads, max_positions), torch.Generator().manual_seed(seed))
    if pretrain_epochs:
        pretrain_lm(lm, [vocab.encode(c) for c in corpus], prefix_len, epochs=pretrain_epochs, seed=seed)
    return vocab, lm.freeze()
