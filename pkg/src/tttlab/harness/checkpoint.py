"""Binary checkpoints.

Layout (little-endian)::

    8 bytes   magic b"TTTLABCK"
    u32       format version
    u32       config length L, then L bytes of UTF-8 JSON
              ({"model": YModelConfig, "meta": training metadata})
    per parameter, in tape order:
      u32 name length, name (UTF-8), u32 rank, rank x u32 dims,
      prod(dims) float32 values

The parameter set is implied by the model config, so a file that ends at a
parameter boundary is still detected as truncated.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np

from ..core import ParamTape
from ..errors import FormatError
from ..ymodel import YModel, YModelConfig, build_model

MAGIC = b"TTTLABCK"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: YModelConfig
    params: Dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def model(self) -> YModel:
        tape = ParamTape()
        for name, value in self.params.items():
            tape.add(name, value.astype(self.config.dtype))
        return YModel(tape, self.config)


def encode_checkpoint(model: YModel, meta: dict | None = None) -> bytes:
    header = json.dumps({"model": model.config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    out = [MAGIC, _U32.pack(VERSION), _U32.pack(len(header)), header]
    for name, t in model.tape.items():
        raw = name.encode()
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        out += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        out += [_U32.pack(s) for s in arr.shape]
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(path, model: YModel, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(model, meta))


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.source}: truncated at byte offset {len(self.buf)} while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_checkpoint(buf: bytes, source: str = "<bytes>") -> Checkpoint:
    r = _Reader(buf, source)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError(f"{source}: not a checkpoint (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(r.take(r.u32("config length"), "config").decode())
        config = YModelConfig.from_dict(header["model"])
        config.validate()
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{source}: malformed config block ({exc})") from exc
    expected = build_model(config, 0).tape
    params = {}
    for _ in range(len(expected)):
        name = r.take(r.u32("name length"), "parameter name").decode(errors="replace")
        rank = r.u32(f"rank of {name}")
        shape = tuple(r.u32(f"dims of {name}") for _ in range(rank))
        if name not in expected or name in params:
            raise FormatError(f"{source}: unexpected parameter {name!r}")
        if shape != expected[name].shape:
            raise FormatError(f"{source}: parameter {name!r} has shape {shape}, config implies {expected[name].shape}")
        count = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(4 * count, f"values of {name}"), dtype="<f4").reshape(shape).copy()
    if r.pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - r.pos} trailing bytes after the last parameter")
    return Checkpoint(config, params, header.get("meta", {}))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: checkpoint not found")
    return decode_checkpoint(path.read_bytes(), str(path))
