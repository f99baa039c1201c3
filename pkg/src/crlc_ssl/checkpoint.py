"""``.ckpt`` files: a config echo plus a table of named float32 tensors.

Layout (little-endian): magic ``CAMC``, u16 version, u32 config length,
UTF-8 config text, u32 tensor count, then per tensor: u16 name length, name
bytes, u8 rank, u32 per dim, float32 payload.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .data import _atomic_write
from .errors import CheckpointMismatchError, FormatError

MAGIC = b"CAMC"
VERSION = 1


@dataclass
class Checkpoint:
    config_text: str = ""
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_parameters(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())


def save_checkpoint(path, tensors: Mapping[str, object], config_text: str = "") -> None:
    items = []
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        items.append((name, np.array(arr, dtype="<f4", order="C")))
    if len({n for n, _ in items}) != len(items):
        raise ValueError("tensor names must be unique")
    config_bytes = config_text.encode("utf-8")

    def write(fh):
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(items)))
        for name, arr in items:
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<HB", len(name_bytes), arr.ndim))
            fh.write(name_bytes)
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())

    _atomic_write(path, write)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.buf):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.buf) - self.offset} remain", self.offset)
        out = self.buf[self.offset : self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    version, config_len = r.unpack("<HI", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    config_text = r.take(config_len, "config text").decode("utf-8")
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        start = r.offset
        name_len, rank = r.unpack("<HB", "tensor header")
        name = r.take(name_len, "tensor name").decode("utf-8")
        shape = r.unpack(f"<{rank}I", f"shape of {name}")
        size = int(np.prod(shape, dtype=np.int64))
        payload = r.take(4 * size, f"payload of {name}")
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", start)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    if r.offset != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.offset} trailing bytes", r.offset)
    return Checkpoint(config_text=config_text, tensors=tensors)


def module_tensors(module: torch.nn.Module, prefix: str = "") -> dict[str, torch.Tensor]:
    return {prefix + name: t for name, t in module.state_dict().items()}


def load_into(module: torch.nn.Module, tensors: Mapping[str, np.ndarray], prefix: str = "") -> None:
    """Copy ``tensors`` into ``module``; any missing, extra, or mis-shaped tensor is an error."""
    state = module.state_dict()
    wanted = {prefix + k for k in state}
    have = {k for k in tensors if k.startswith(prefix)}
    missing = sorted(wanted - have)
    if missing:
        raise CheckpointMismatchError(f"checkpoint lacks tensor {missing[0]!r} ({len(missing)} missing)")
    extra = sorted(have - wanted)
    if extra:
        raise CheckpointMismatchError(f"checkpoint has unexpected tensor {extra[0]!r}")
    new_state = {}
    for key, current in state.items():
        arr = np.asarray(tensors[prefix + key])
        if tuple(arr.shape) != tuple(current.shape):
            raise CheckpointMismatchError(
                f"tensor {prefix + key!r}: checkpoint shape {tuple(arr.shape)} != model shape {tuple(current.shape)}"
            )
        new_state[key] = torch.from_numpy(arr.copy()).to(current.dtype)
    module.load_state_dict(new_state)


def parameter_checksum(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
