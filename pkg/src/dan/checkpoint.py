"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic       8 bytes  b"DANCKPT\\0"
    version     u32
    digest      32 bytes sha256 of the config text
    config      u32 length + utf-8 config text
    epoch       u32
    count       u32 number of tensor records
    record      u16 name length, name bytes, u8 rank, rank x u64 extents,
                prod(extents) x f64 values (row-major)

Record names are prefixed ``param/``, ``buffer/`` or ``optim/``.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .model import DAN, build_model
from .optim import Optimizer

MAGIC = b"DANCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    tensors: dict[str, np.ndarray]
    epoch: int = 0
    version: int = VERSION

    # --------------------------------------------------------- conversions
    @classmethod
    def capture(cls, config: RunConfig, model: DAN, optimizer: Optional[Optimizer], epoch: int) -> "Checkpoint":
        tensors = {}
        for name, p in model.named_parameters():
            tensors[f"param/{name}"] = p.data.copy()
        for name, buf in model.named_buffers():
            tensors[f"buffer/{name}"] = buf.copy()
        if optimizer is not None:
            for name, arr in optimizer.state_arrays().items():
                tensors[f"optim/{name}"] = np.array(arr, dtype=np.float64)
        return cls(config, tensors, epoch)

    def build_model(self) -> DAN:
        model = build_model(self.config.model, self.config.seed)
        self.restore(model)
        return model

    def restore(self, model: DAN, optimizer: Optional[Optimizer] = None) -> None:
        params = dict(model.named_parameters())
        buffers = dict(model.named_buffers())
        expected = {f"param/{n}" for n in params} | {f"buffer/{n}" for n in buffers}
        present = {k for k in self.tensors if not k.startswith("optim/")}
        if expected != present:
            missing = sorted(expected - present)
            extra = sorted(present - expected)
            raise CheckpointError(f"checkpoint does not match the model (missing {missing[:3]}, extra {extra[:3]})")
        for name, p in params.items():
            arr = self.tensors[f"param/{name}"]
            if arr.shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data[...] = arr
        for name, buf in buffers.items():
            arr = self.tensors[f"buffer/{name}"]
            if arr.shape != buf.shape:
                raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {buf.shape}")
            buf[...] = arr
        if optimizer is not None:
            optimizer.load_state_arrays({k[len("optim/"):]: v for k, v in self.tensors.items() if k.startswith("optim/")})

    # -------------------------------------------------------------- bytes
    def to_bytes(self) -> bytes:
        text = self.config.to_text().encode()
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", self.version))
        out.write(hashlib.sha256(text).digest())
        out.write(struct.pack("<I", len(text)))
        out.write(text)
        out.write(struct.pack("<II", self.epoch, len(self.tensors)))
        for name, arr in self.tensors.items():
            raw = name.encode()
            arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
            out.write(struct.pack("<H", len(raw)))
            out.write(raw)
            out.write(struct.pack("<B", arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.write(arr.tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        view = memoryview(blob)
        pos = 0

        def read(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(view):
                raise CheckpointError("truncated checkpoint")
            chunk = bytes(view[pos : pos + n])
            pos += n
            return chunk

        if read(8) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", read(4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        digest = read(32)
        (n,) = struct.unpack("<I", read(4))
        text = read(n)
        if hashlib.sha256(text).digest() != digest:
            raise CheckpointError("config digest mismatch")
        config = RunConfig.from_text(text.decode())
        epoch, count = struct.unpack("<II", read(8))
        tensors = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", read(2))
            name = read(ln).decode()
            (rank,) = struct.unpack("<B", read(1))
            shape = struct.unpack(f"<{rank}Q", read(8 * rank)) if rank else ()
            size = int(np.prod(shape)) if shape else 1
            tensors[name] = np.frombuffer(read(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        if pos != len(view):
            raise CheckpointError("trailing bytes after the last record")
        return cls(config, tensors, epoch, version)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes())
