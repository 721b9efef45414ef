"""Versioned binary checkpoint container with exact round-trip semantics.

Layout (all integers little-endian):

    magic "CREAMCKPT1" | version u32 | config_len u64 | config JSON |
    n_records u64 | records... | sha256 of everything before it (32 bytes)

    record := name_len u32 | name UTF-8 | dtype u8 (0=f32, 1=f64) |
              frozen u8 | ndim u32 | dims u64 * ndim | payload (LE)

Records are written in sorted-name order so identical states serialize to
identical bytes. Loading verifies magic, version, and the content hash; a
truncated or corrupt file yields an error and no partial state.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .numcore import Tensor

MAGIC = b"CREAMCKPT1"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(RuntimeError):
    pass


def canonical_config_bytes(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, tensors: dict[str, Tensor], config: dict, frozen: set[str] | None = None) -> None:
    frozen = frozen or set()
    parts: list[bytes] = [MAGIC, struct.pack("<I", VERSION)]
    blob = canonical_config_bytes(config)
    parts.append(struct.pack("<Q", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<Q", len(tensors)))
    for name in sorted(tensors):
        t = tensors[name]
        data = t.data if isinstance(t, Tensor) else np.asarray(t)
        code = _DTYPE_CODES.get(data.dtype)
        if code is None:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {data.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", code, 1 if name in frozen else 0))
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape) if data.ndim else b"")
        parts.append(np.ascontiguousarray(data).astype(_CODE_DTYPES[code], copy=False).tobytes())
    body = b"".join(parts)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as f:
        f.write(body + digest)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint ends unexpectedly (truncated record table)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict, set[str]]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 + 32:
        raise CheckpointError(f"{path}: too short to be a checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: content hash mismatch (truncated or corrupt file)")
    r = _Reader(body)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a checkpoint)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version} unsupported (expected {VERSION})")
    config = json.loads(r.take(r.u64()).decode("utf-8"))
    n_records = r.u64()
    tensors: dict[str, Tensor] = {}
    frozen: set[str] = set()
    for _ in range(n_records):
        name = r.take(r.u32()).decode("utf-8")
        code, frozen_flag = struct.unpack("<BB", r.take(2))
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: record {name!r} has unknown dtype code {code}")
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        dtype = _CODE_DTYPES[code]
        payload = r.take(count * dtype.itemsize)
        data = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        if frozen_flag:
            frozen.add(name)
        tensors[name] = Tensor(data, requires_grad=not frozen_flag, name=name)
    if r.pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - r.pos} unexpected trailing bytes")
    return tensors, config, frozen


def fingerprint_array(name: str, data: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(name.encode("utf-8"))
    h.update(str(data.dtype).encode("ascii"))
    h.update(str(data.shape).encode("ascii"))
    h.update(np.ascontiguousarray(data).tobytes())
    return h.hexdigest()


def fingerprint_tensors(tensors: dict[str, Tensor], names=None) -> dict[str, str]:
    picked = sorted(tensors) if names is None else sorted(names)
    return {name: fingerprint_array(name, tensors[name].data) for name in picked}
