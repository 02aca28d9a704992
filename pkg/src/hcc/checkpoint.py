"""Versioned binary checkpoints for trained boundary-proxy parameters.

Layout: magic ``HCCM``, version u32-LE, config-block length u32-LE, config
block (UTF-8 JSON with sorted keys: the HccConfig fields plus the target
normalization), shape-table entry count u32-LE, then per entry a name
(u16-LE length + UTF-8), rank u8, and u32-LE dims, followed by all weights
as 8-byte little-endian reals in table order.  Loading a saved checkpoint
reproduces parameters bitwise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import HccConfig, ModelError, param_spec
from .training import CorpusNormalization

CHECKPOINT_MAGIC = b"HCCM"
CHECKPOINT_VERSION = 1


class CheckpointError(ModelError):
    pass


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("unexpected end of checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def save_checkpoint(
    params: dict[str, np.ndarray],
    config: HccConfig,
    norm: CorpusNormalization,
    path: Path | str,
) -> None:
    meta = {"config": asdict(config), "normalization": asdict(norm)}
    config_block = json.dumps(meta, sort_keys=True).encode("utf-8")

    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    parts.append(struct.pack("<I", len(config_block)))
    parts.append(config_block)

    spec = param_spec(config)
    parts.append(struct.pack("<I", len(spec)))
    payload = []
    for name, shape in spec:
        arr = np.asarray(params[name], dtype="<f8")
        if arr.ndim:
            arr = np.ascontiguousarray(arr)
        if arr.shape != shape:
            raise CheckpointError(f"parameter {name} has shape {arr.shape}, expected {shape}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        payload.append(arr.tobytes(order="C"))
    parts.extend(payload)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: Path | str) -> tuple[dict[str, np.ndarray], HccConfig, CorpusNormalization]:
    blob = Path(path).read_bytes()
    reader = _Reader(blob)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(reader.take(reader.u32()).decode("utf-8"))
    config = HccConfig(**meta["config"])
    norm = CorpusNormalization(**meta["normalization"])

    count = reader.u32()
    expected = param_spec(config)
    if count != len(expected):
        raise CheckpointError(
            f"{path}: shape table has {count} entries, config implies {len(expected)}"
        )
    table = []
    for name, shape in expected:
        got_name = reader.take(reader.u16()).decode("utf-8")
        ndim = reader.u8()
        got_shape = tuple(reader.u32() for _ in range(ndim))
        if got_name != name or got_shape != shape:
            raise CheckpointError(
                f"{path}: shape table mismatch: expected {name}{shape}, "
                f"got {got_name}{got_shape}"
            )
        table.append((name, shape))
    params = {}
    for name, shape in table:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = reader.take(8 * size)
        arr = np.frombuffer(raw, dtype="<f8").copy()
        params[name] = np.float64(arr[0]) if not shape else arr.reshape(shape)
    if reader.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - reader.pos} trailing bytes")
    return params, config, norm
