"""Stage-one grounding feature contract: a deterministic synthetic backend and a file codec.

A real grounding detector would export ``f_img`` (already pooled to N tokens),
``f_query`` and ``f_decoder``; anything that produces a :class:`FeatureBundle`
or a GVLF file can stand in for it.

The synthetic backend draws unit-norm background noise rows and injects one
fixed "signature" direction per prompt phrase.  Phrases are separated by
``.`` as in grounding-detector prompts (``"brick pile . ground litter"``).
``f_query`` receives one signature row per distinct phrase, ``f_decoder``
one per phrase occurrence (a repeated phrase stands for several instances),
and ``f_img`` carries only the optional scene signature.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapter import FeatureBundle
from .errors import HeaderError, NonFiniteError, SizeMismatchError, ValidationError

MAGIC = b"GVLF"
FORMAT_VERSION = 1
SIGNATURE_AMPLITUDE = 2.0
_F32 = np.dtype("<f4")


@dataclass(frozen=True)
class GroundingRequest:
    image_id: str
    prompt: str
    seed: int = 0
    scene: str = ""

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be nonempty")
        if not self.prompt.strip():
            raise ValidationError("prompt must be nonempty")
        if self.seed < 0:
            raise ValidationError("seed must be unsigned")


@dataclass(frozen=True)
class FeatureShape:
    n: int = 32
    l_query: int = 64
    l_decoder: int = 64
    channels: int = 32

    def __post_init__(self):
        for name in ("n", "l_query", "l_decoder", "channels"):
            if getattr(self, name) < 1:
                raise ValidationError(f"feature shape {name} must be >= 1")


def stable_hash64(*fields) -> int:
    h = hashlib.blake2b(digest_size=8)
    for f in fields:
        data = str(f).encode("utf-8")
        h.update(struct.pack("<Q", len(data)))
        h.update(data)
    return int.from_bytes(h.digest(), "little")


def _rng(*fields) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stable_hash64(*fields)))


def parse_prompt(prompt: str) -> list[str]:
    """Phrases in order, repeats kept, whitespace collapsed, lowercased."""
    return [" ".join(p.lower().split()) for p in prompt.split(".") if p.strip()]


def signature(phrase: str, channels: int) -> np.ndarray:
    """The fixed unit-norm direction for ``phrase`` at width ``channels`` (float64)."""
    v = _rng("signature", " ".join(phrase.lower().split()), channels).standard_normal(channels)
    return v / np.linalg.norm(v)


def generate_features(req: GroundingRequest, shape: FeatureShape = FeatureShape()) -> FeatureBundle:
    rng = _rng("request", req.image_id, req.prompt, req.seed, req.scene)
    c = shape.channels
    scale = 1.0 / np.sqrt(c)
    f_img = rng.standard_normal((shape.n, c)) * scale
    f_query = rng.standard_normal((shape.l_query, c)) * scale
    f_decoder = rng.standard_normal((shape.l_decoder, c)) * scale

    phrases = parse_prompt(req.prompt)
    distinct = list(dict.fromkeys(phrases))
    q_rows = rng.permutation(shape.l_query)
    for i, phrase in enumerate(distinct):
        f_query[q_rows[i % shape.l_query]] += SIGNATURE_AMPLITUDE * signature(phrase, c)
    d_rows = rng.permutation(shape.l_decoder)
    for i, phrase in enumerate(phrases):
        f_decoder[d_rows[i % shape.l_decoder]] += SIGNATURE_AMPLITUDE * signature(phrase, c)
    if req.scene:
        f_img += SIGNATURE_AMPLITUDE * signature("scene: " + req.scene, c)

    return FeatureBundle(
        f_img.astype(np.float32), f_query.astype(np.float32), f_decoder.astype(np.float32)
    )


def encode_features(bundle: FeatureBundle) -> bytes:
    bundle = FeatureBundle(*bundle.arrays())  # revalidate
    header = json.dumps(
        {
            "n": bundle.f_img.shape[0],
            "l_query": bundle.f_query.shape[0],
            "l_decoder": bundle.f_decoder.shape[0],
            "c": bundle.channels,
            "dtype": "f32",
            "order": "row-major",
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype=_F32).tobytes() for a in bundle.arrays())
    return MAGIC + struct.pack("<BI", FORMAT_VERSION, len(header)) + header + payload


def decode_features(blob: bytes) -> FeatureBundle:
    if len(blob) < 9 or blob[:4] != MAGIC:
        raise HeaderError("not a GVLF feature file (bad magic)")
    version, hlen = struct.unpack_from("<BI", blob, 4)
    if version != FORMAT_VERSION:
        raise HeaderError(f"unsupported GVLF version {version}")
    if 9 + hlen > len(blob):
        raise SizeMismatchError("header extends past end of file")
    try:
        header = json.loads(blob[9 : 9 + hlen].decode("utf-8"))
        n, lq, ld, c = (int(header[k]) for k in ("n", "l_query", "l_decoder", "c"))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise HeaderError(f"unreadable GVLF header: {exc}") from exc
    if header.get("dtype") != "f32" or header.get("order") != "row-major":
        raise HeaderError(f"unsupported layout {header.get('dtype')}/{header.get('order')}")
    if min(n, lq, ld, c) < 1:
        raise HeaderError(f"non-positive dimensions in header {header}")
    payload = blob[9 + hlen :]
    expected = 4 * c * (n + lq + ld)
    if len(payload) != expected:
        raise SizeMismatchError(f"payload is {len(payload)} bytes, header declares {expected}")
    flat = np.frombuffer(payload, dtype=_F32)
    if not np.isfinite(flat).all():
        raise NonFiniteError("feature payload contains non-finite values")
    mats = np.split(flat.astype(np.float32), [n * c, (n + lq) * c])
    return FeatureBundle(
        mats[0].reshape(n, c), mats[1].reshape(lq, c), mats[2].reshape(ld, c)
    )


def save_features(bundle: FeatureBundle, path) -> None:
    Path(path).write_bytes(encode_features(bundle))


def load_features(path) -> FeatureBundle:
    return decode_features(Path(path).read_bytes())
