"""Feature adapter: token compression, channel integration, transformer fusion, projection.

The adapter maps three grounding feature streams to ``N`` conditioning tokens in
the language model's embedding space::

    q~ = softmax(T_q  F_q^T) F_q          (N x C)
    d~ = softmax(T_d  F_d^T) F_d          (N x C)
    cat = [F_img | q~ | d~]               (N x 3C)
    fuse = Transformer_D(cat)             (N x 3C)
    out  = fuse W + b                     (N x d_lm)

Every function accepts an optional leading batch dimension.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import checkpoint
from .errors import DimensionError, ValidationError
from .layers import INIT_STD, TransformerBlock, init_linear, reset_parameters

STREAMS = ("img", "query", "decoder")


@dataclass(frozen=True)
class FeatureBundle:
    """The three grounding feature matrices for one image."""

    f_img: np.ndarray
    f_query: np.ndarray
    f_decoder: np.ndarray

    def __post_init__(self):
        mats = (self.f_img, self.f_query, self.f_decoder)
        for name, m in zip(STREAMS, mats):
            if m.ndim != 2:
                raise DimensionError(f"f_{name} must be 2-D, got shape {m.shape}")
            if min(m.shape) < 1:
                raise ValidationError(f"f_{name} is empty: shape {m.shape}")
            if not np.isfinite(m).all():
                raise ValidationError(f"f_{name} contains non-finite values")
        if len({m.shape[1] for m in mats}) != 1:
            raise DimensionError(
                "channel mismatch: " + ", ".join(f"{n}={m.shape[1]}" for n, m in zip(STREAMS, mats))
            )

    @property
    def channels(self) -> int:
        return self.f_img.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.f_img.shape[0]

    def masked(self, streams) -> "FeatureBundle":
        """Copy with the named streams replaced by zeros."""
        parts = {f"f_{s}": getattr(self, f"f_{s}") for s in STREAMS}
        for s in streams:
            if s not in STREAMS:
                raise ValidationError(f"unknown stream {s!r}; expected one of {STREAMS}")
            parts[f"f_{s}"] = np.zeros_like(parts[f"f_{s}"])
        return FeatureBundle(**parts)

    def equals(self, other: "FeatureBundle") -> bool:
        """Bitwise equality of all three matrices."""
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays(), other.arrays())
        )

    def arrays(self):
        return self.f_img, self.f_query, self.f_decoder


@dataclass(frozen=True)
class AdapterConfig:
    n_tokens: int = 32
    channels: int = 32
    depth: int = 2
    heads: int = 4
    lm_width: int = 64

    def __post_init__(self):
        for name, v in asdict(self).items():
            if int(v) < 1:
                raise ValidationError(f"adapter {name} must be >= 1, got {v}")
        if (3 * self.channels) % self.heads:
            raise ValidationError(f"fusion width {3 * self.channels} not divisible by {self.heads} heads")


def _check_finite(*tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise ValidationError("non-finite input")


def compress_tokens(tokens: torch.Tensor, f: torch.Tensor, return_weights: bool = False):
    """Attention-pool ``f`` (..., L, C) onto learnable ``tokens`` (N, C).

    No 1/sqrt(C) temperature is applied.  Returns (..., N, C), plus the
    (..., N, L) attention weights when ``return_weights`` is set.
    """
    if tokens.shape[-1] != f.shape[-1]:
        raise DimensionError(f"token channels {tokens.shape[-1]} != feature channels {f.shape[-1]}")
    _check_finite(tokens, f)
    weights = (tokens @ f.transpose(-2, -1)).softmax(dim=-1)
    out = weights @ f
    return (out, weights) if return_weights else out


def integrate_tokens(f_img: torch.Tensor, fq: torch.Tensor, fd: torch.Tensor) -> torch.Tensor:
    """Concatenate along channels: row i is [f_img[i] | fq[i] | fd[i]]."""
    if not (f_img.shape == fq.shape == fd.shape):
        raise DimensionError(
            f"integration needs equal shapes, got {tuple(f_img.shape)}, {tuple(fq.shape)}, {tuple(fd.shape)}"
        )
    return torch.cat([f_img, fq, fd], dim=-1)


def fuse(f_cat: torch.Tensor, blocks) -> torch.Tensor:
    if len(blocks) == 0:
        raise ValidationError("fusion needs at least one block")
    for blk in blocks:
        if f_cat.shape[-1] != blk.width:
            raise DimensionError(f"fusion input width {f_cat.shape[-1]} != block width {blk.width}")
        f_cat = blk(f_cat)
    return f_cat


def project(f_fuse: torch.Tensor, projection: nn.Linear) -> torch.Tensor:
    if f_fuse.shape[-1] != projection.in_features:
        raise DimensionError(f"projection expects width {projection.in_features}, got {f_fuse.shape[-1]}")
    return projection(f_fuse)


class FeatureAdapter(nn.Module):
    """Trainable bridge from grounding features to LM conditioning tokens."""

    kind = "adapter"

    def __init__(self, config: AdapterConfig = AdapterConfig(), generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        n, c = config.n_tokens, config.channels
        self.t_query = nn.Parameter(torch.empty(n, c))
        self.t_decoder = nn.Parameter(torch.empty(n, c))
        self.blocks = nn.ModuleList(TransformerBlock(3 * c, config.heads) for _ in range(config.depth))
        self.projection = init_linear(nn.Linear(3 * c, config.lm_width))
        if generator is not None:
            reset_parameters(self, generator)
        else:
            nn.init.normal_(self.t_query, std=INIT_STD)
            nn.init.normal_(self.t_decoder, std=INIT_STD)

    def forward(self, f_img, f_query, f_decoder):
        if f_img.shape[-2] != self.config.n_tokens:
            raise DimensionError(f"f_img has {f_img.shape[-2]} tokens, adapter expects {self.config.n_tokens}")
        _check_finite(f_img)
        fq = compress_tokens(self.t_query, f_query)
        fd = compress_tokens(self.t_decoder, f_decoder)
        lead = f_img.shape[:-2]
        if lead:
            fq = fq.expand(*lead, *fq.shape[-2:]) if fq.dim() == 2 else fq
            fd = fd.expand(*lead, *fd.shape[-2:]) if fd.dim() == 2 else fd
        return project(fuse(integrate_tokens(f_img, fq, fd), self.blocks), self.projection)

    def to_bytes(self) -> bytes:
        return checkpoint.encode(self.kind, asdict(self.config), checkpoint.module_tensors(self))

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FeatureAdapter":
        kind, cfg, tensors = checkpoint.decode(blob)
        if kind != cls.kind:
            raise ValidationError(f"checkpoint holds {kind!r}, expected {cls.kind!r}")
        model = cls(AdapterConfig(**cfg))
        checkpoint.load_module_tensors(model, tensors)
        return model


class ProjectionOnly(nn.Module):
    """Adapter-free baseline: a lone affine map C -> d_lm applied to f_img."""

    kind = "projection_only"

    def __init__(self, config: AdapterConfig = AdapterConfig(), generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        self.projection = init_linear(nn.Linear(config.channels, config.lm_width))
        if generator is not None:
            reset_parameters(self, generator)

    def forward(self, f_img, f_query=None, f_decoder=None):
        if f_img.shape[-2] != self.config.n_tokens:
            raise DimensionError(f"f_img has {f_img.shape[-2]} tokens, expected {self.config.n_tokens}")
        return project(f_img, self.projection)

    def to_bytes(self) -> bytes:
        return checkpoint.encode(self.kind, asdict(self.config), checkpoint.module_tensors(self))

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ProjectionOnly":
        kind, cfg, tensors = checkpoint.decode(blob)
        if kind != cls.kind:
            raise ValidationError(f"checkpoint holds {kind!r}, expected {cls.kind!r}")
        model = cls(AdapterConfig(**cfg))
        checkpoint.load_module_tensors(model, tensors)
        return model


def load_checkpoint(blob: bytes):
    """Restore either adapter variant from checkpoint bytes."""
    kind = checkpoint.decode(blob)[0]
    for cls in (FeatureAdapter, ProjectionOnly):
        if cls.kind == kind:
            return cls.from_bytes(blob)
    raise ValidationError(f"unknown checkpoint kind {kind!r}")


def adapter_forward(bundle: FeatureBundle, adapter: nn.Module) -> torch.Tensor:
    """Run one bundle through ``adapter``; returns the (N, d_lm) conditioning tokens."""
    if bundle.channels != adapter.config.channels:
        raise DimensionError(f"bundle channels {bundle.channels} != adapter channels {adapter.config.channels}")
    dtype = next(adapter.parameters()).dtype
    arrays = [torch.as_tensor(np.asarray(a), dtype=dtype) for a in bundle.arrays()]
    return adapter(*arrays)
