"""Self-describing tensor container used for adapter and language-model checkpoints.

Layout::

    b"GVLC" | version: u8 | header_len: u32 LE | header: UTF-8 JSON | payload

The header holds ``kind``, ``config`` and an ordered tensor table
(``name``, ``shape``).  The payload is every tensor in table order,
row-major little-endian float32.  The header is serialized with sorted keys
and no whitespace so that equal states give equal bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import HeaderError, NonFiniteError, SizeMismatchError

MAGIC = b"GVLC"
FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


def encode(kind: str, config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    table = []
    chunks = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=_F32)
        table.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes(order="C"))
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "kind": kind, "config": config, "tensors": table},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<BI", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def decode(blob: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    if len(blob) < 9 or blob[:4] != MAGIC:
        raise HeaderError("not a checkpoint container (bad magic)")
    version, hlen = struct.unpack_from("<BI", blob, 4)
    if version != FORMAT_VERSION:
        raise HeaderError(f"unsupported checkpoint version {version}")
    if 9 + hlen > len(blob):
        raise SizeMismatchError("header extends past end of file")
    try:
        header = json.loads(blob[9 : 9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"unreadable checkpoint header: {exc}") from exc
    payload = memoryview(blob)[9 + hlen :]
    expected = sum(4 * int(np.prod(t["shape"], dtype=np.int64)) for t in header["tensors"])
    if expected != len(payload):
        raise SizeMismatchError(f"payload is {len(payload)} bytes, header declares {expected}")
    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=_F32, count=count, offset=offset).reshape(entry["shape"])
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"tensor {entry['name']!r} contains non-finite values")
        tensors[entry["name"]] = arr.copy()
        offset += 4 * count
    return header["kind"], header["config"], tensors


def module_tensors(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module_tensors(module: torch.nn.Module, tensors: dict[str, np.ndarray]) -> None:
    ref = module.state_dict()
    if set(ref) != set(tensors):
        missing = sorted(set(ref) ^ set(tensors))
        raise HeaderError(f"checkpoint tensors do not match module: {missing}")
    module.load_state_dict(
        {k: torch.from_numpy(v).to(ref[k].dtype) for k, v in tensors.items()}
    )


def write(path, blob: bytes) -> None:
    Path(path).write_bytes(blob)


def read(path) -> bytes:
    return Path(path).read_bytes()
