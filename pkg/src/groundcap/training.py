"""Adapter optimization with frozen LM/backend enforcement, lr schedule and ablations."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import torch

from .adapter import STREAMS, AdapterConfig, FeatureAdapter, FeatureBundle, ProjectionOnly
from .errors import ConfigError, GroundcapError
from .grounding import _rng, encode_features
from .language import TinyLM, Vocab, caption_loss, generate, pad_batch, teacher_forcing
from .metrics.caption import CaptionScores, evaluate_captions


class FreezeViolation(GroundcapError):
    """A component that must stay frozen changed during training."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_epochs: int = 20
    lr_milestones: tuple[int, ...] = (12, 17)
    lr_gamma: float = 0.1
    grad_clip: float = 1.0
    seed: int = 0
    adapter: AdapterConfig = AdapterConfig()
    use_adapter: bool = True
    mask: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        ms = list(self.lr_milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"lr_milestones must be strictly increasing, got {ms}")
        if ms and (ms[0] < 0 or ms[-1] >= max(self.max_epochs, 1)):
            raise ConfigError(f"lr_milestones must lie in [0, max_epochs), got {ms}")
        if not self.lr_gamma > 0:
            raise ConfigError("lr_gamma must be > 0")
        bad = set(self.mask) - set(STREAMS)
        if bad:
            raise ConfigError(f"unknown masked streams {sorted(bad)}; choose from {STREAMS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["lr_milestones"] = list(self.lr_milestones)
        d["mask"] = list(self.mask)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "adapter" in d and isinstance(d["adapter"], dict):
            d["adapter"] = AdapterConfig(**d["adapter"])
        for key in ("betas", "lr_milestones", "mask"):
            if key in d:
                d[key] = tuple(d[key])
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown training keys {sorted(unknown)}")
        return cls(**d)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Multi-step schedule: lr * gamma ** (#milestones <= epoch)."""
    return cfg.lr * cfg.lr_gamma ** sum(1 for m in cfg.lr_milestones if m <= epoch)


@dataclass(frozen=True)
class TrainItem:
    bundle: FeatureBundle
    ids: tuple[int, ...]


@dataclass
class FreezeReport:
    changed: dict[str, bool]

    @property
    def frozen_ok(self) -> bool:
        return not any(v for k, v in self.changed.items() if k != "adapter")

    @property
    def passed(self) -> bool:
        """Frozen components unchanged and the adapter actually trained."""
        return self.frozen_ok and self.changed.get("adapter", False)


def freeze_audit(before: dict[str, bytes], after: dict[str, bytes]) -> FreezeReport:
    if set(before) != set(after):
        raise ConfigError(f"component sets differ: {sorted(set(before) ^ set(after))}")
    return FreezeReport({k: before[k] != after[k] for k in sorted(before)})


def backend_bytes(items: Sequence[TrainItem]) -> bytes:
    """Digest of every feature bundle the backend delivered, standing in for its state."""
    h = hashlib.sha256()
    for it in items:
        h.update(encode_features(it.bundle))
    return h.digest()


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    freeze: FreezeReport | None = None
    checkpoint_path: str | None = None

    @property
    def losses(self) -> list[float]:
        return [r["mean_loss"] for r in self.records]

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        summary = {
            "summary": True,
            "epochs": len(self.records),
            "final_loss": self.losses[-1] if self.records else None,
            "checkpoint": self.checkpoint_path,
            "freeze_audit": self.freeze.changed if self.freeze else None,
        }
        lines.append(json.dumps(summary, sort_keys=True))
        return "\n".join(lines) + "\n"


def build_model(cfg: TrainConfig):
    gen = torch.Generator().manual_seed(cfg.seed)
    cls = FeatureAdapter if cfg.use_adapter else ProjectionOnly
    return cls(cfg.adapter, generator=gen)


def _stack(items: Sequence[TrainItem], mask=()):
    bundles = [it.bundle.masked(mask) if mask else it.bundle for it in items]
    return [torch.from_numpy(np.stack([b.arrays()[k] for b in bundles])) for k in range(3)]


def train_adapter(cfg: TrainConfig, train_set: Sequence[TrainItem], lm: TinyLM, model=None):
    """Fit the adapter (or the projection-only baseline) on caption loss alone.

    Returns ``(model, log)``.  The LM must already be frozen.  Batch order is
    drawn from a Philox stream keyed by ``cfg.seed``.
    """
    if not train_set:
        raise ConfigError("training set is empty")
    if not getattr(lm, "frozen", False) or any(p.requires_grad for p in lm.parameters()):
        raise ConfigError("refusing to train: the language model is not frozen")
    model = build_model(cfg) if model is None else model
    before = {"adapter": model.to_bytes(), "lm": lm.to_bytes(), "backend": backend_bytes(train_set)}

    feats = _stack(train_set, cfg.mask)
    pairs = [teacher_forcing(it.ids) for it in train_set]
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps,
                            weight_decay=cfg.weight_decay)
    shuffle = _rng("shuffle", cfg.seed)
    log = TrainLog()
    model.train()
    for epoch in range(cfg.max_epochs):
        lr = lr_at(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        t0 = time.perf_counter()
        order = shuffle.permutation(len(train_set))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            prefix = model(*(f[idx] for f in feats))
            inp = pad_batch([pairs[i][0] for i in idx])
            tgt = pad_batch([pairs[i][1] for i in idx])
            loss = caption_loss(lm(prefix, inp), tgt)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            total += loss.item() * len(idx)
        log.records.append({
            "epoch": epoch,
            "mean_loss": total / len(train_set),
            "lr": lr,
            "wall_time": time.perf_counter() - t0,
        })
    model.eval()

    after = {"adapter": model.to_bytes(), "lm": lm.to_bytes(), "backend": backend_bytes(train_set)}
    log.freeze = freeze_audit(before, after)
    if not log.freeze.frozen_ok:
        raise FreezeViolation(f"frozen components changed: {log.freeze.changed}")
    return model, log


@torch.no_grad()
def caption_bundles(model, lm: TinyLM, bundles: Sequence[FeatureBundle], max_len: int = 40,
                    mask=()) -> list[list[int]]:
    """Greedy captions (token ids) for each bundle."""
    out = []
    for b in bundles:
        b = b.masked(mask) if mask else b
        prefix = model(*(torch.from_numpy(a) for a in b.arrays()))
        out.append(generate(prefix, lm, max_len))
    return out


ABLATION_AXES = ("adapter_onoff", "depth", "feature_mask")


@dataclass
class CaptionData:
    """Everything an ablation arm needs: frozen LM, vocabulary, training items and an eval split."""

    vocab: Vocab
    lm: TinyLM
    train: list[TrainItem]
    eval_bundles: list[FeatureBundle]
    eval_refs: list[list[str]]


@dataclass
class AblationRow:
    arm: str
    scores: CaptionScores
    final_loss: float


def ablation_arms(axis: str, base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    if axis == "adapter_onoff":
        return [("without", replace(base, use_adapter=False)), ("with", replace(base, use_adapter=True))]
    if axis == "depth":
        return [(str(d), replace(base, adapter=replace(base.adapter, depth=d))) for d in (1, 2, 3, 4)]
    if axis == "feature_mask":
        return [(f"no_{s}", replace(base, mask=(s,))) for s in STREAMS] + [("full", replace(base, mask=()))]
    raise ConfigError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")


def evaluate_model(model, data: CaptionData, mask=(), max_len: int = 40) -> CaptionScores:
    ids = caption_bundles(model, data.lm, data.eval_bundles, max_len, mask)
    return evaluate_captions([data.vocab.decode(i) for i in ids], data.eval_refs)


def run_ablation(axis: str, base_cfg: TrainConfig, data: CaptionData, max_len: int = 40) -> list[AblationRow]:
    """Train and score one arm per row of the chosen ablation."""
    rows = []
    for label, cfg in ablation_arms(axis, base_cfg):
        model, log = train_adapter(cfg, data.train, data.lm)
        scores = evaluate_model(model, data, cfg.mask, max_len)
        rows.append(AblationRow(label, scores, log.losses[-1] if log.records else float("nan")))
    return rows


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    keys = list(rows[0].scores.reported()) if rows else []
    out = ["arm," + ",".join(keys) + ",final_loss"]
    for r in rows:
        rep = r.scores.reported()
        out.append(r.arm + "," + ",".join(f"{rep[k]:.4f}" for k in keys) + f",{r.final_loss:.6f}")
    return "\n".join(out) + "\n"
