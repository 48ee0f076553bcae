"""Checkpoint persistence.

Binary layout (little-endian):

  "NDST" | u32 version | u32 entry count
  per entry: u16 name length | UTF-8 name | u8 ndim | ndim × u32 dims | f32 data
  u32 CRC32 of every preceding byte

Training metadata (effect id, config echo, metrics, network shapes) lives in
a JSON sidecar next to the binary: `<checkpoint>.json`.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from validate.validate_load import CHECKPOINT_MAGIC

from .errors import CheckpointError, CorruptCheckpoint, EffectMismatch, VersionMismatch

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
SIDECAR_SUFFIX = ".json"


@dataclass
class Checkpoint:
    """Named float32 arrays plus JSON metadata."""
    arrays:   Dict[str, np.ndarray]
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def effect_id(self) -> Optional[str]:
        return self.metadata.get("effect_id")

    @property
    def kind(self) -> Optional[str]:
        return self.metadata.get("kind")


def sidecar_path(path: Union[str, Path]) -> Path:
    """Return the metadata sidecar path for a checkpoint file."""
    return Path(str(path) + SIDECAR_SUFFIX)


def encode_arrays(arrays: Dict[str, np.ndarray]) -> bytes:
    """Serialise arrays (in dict order) to the binary layout."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays))]
    for name, array in arrays.items():
        raw_name = name.encode("utf-8")
        data = np.ascontiguousarray(array, dtype="<f4")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_arrays(blob: bytes) -> Dict[str, np.ndarray]:
    """Parse the binary layout.

    Raises:
      CorruptCheckpoint: Bad magic, truncation, trailing bytes or CRC failure.
      VersionMismatch: Unsupported format version.
    """
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint("not a checkpoint file (bad magic or too short)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    body, (crc,) = blob[:-4], struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptCheckpoint("CRC mismatch")

    (count,) = struct.unpack_from("<I", body, 8)
    pos = 12
    arrays: Dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            end = pos + 4 * size
            if end > len(body):
                raise CorruptCheckpoint(f"entry '{name}' extends past end of file")
            arrays[name] = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos = end
    except (struct.error, UnicodeDecodeError) as e:
        raise CorruptCheckpoint(f"truncated or malformed entry table: {e}") from e
    if pos != len(body):
        raise CorruptCheckpoint(f"{len(body) - pos} unexpected trailing bytes")
    return arrays


def _atomic_write(path: Path, data: bytes) -> None:
    dir_ = path.parent
    dir_.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=dir_)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    """Write the binary file and its metadata sidecar (both atomically).

    Raises:
      CheckpointError: The files could not be written.
    """
    path = Path(path)
    try:
        _atomic_write(path, encode_arrays(ckpt.arrays))
        meta = {"version": CHECKPOINT_VERSION, **ckpt.metadata}
        _atomic_write(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True).encode("utf-8"))
    except OSError as e:
        raise CheckpointError(f"could not write checkpoint '{path}': {e}") from e
    log.info("saved checkpoint %s (%d arrays)", path, len(ckpt.arrays))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint and, if present, its sidecar.

    Raises:
      CorruptCheckpoint / VersionMismatch: See `decode_arrays`.
      CheckpointError: The file could not be read.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"could not read checkpoint '{path}': {e}") from e
    arrays = decode_arrays(blob)

    metadata: Dict[str, Any] = {}
    try:
        with open(sidecar_path(path), "r", encoding="utf-8") as f:
            metadata = json.load(f)
    except FileNotFoundError:
        log.warning("checkpoint %s has no metadata sidecar", path)
    except (OSError, ValueError) as e:
        raise CorruptCheckpoint(f"unreadable sidecar for '{path}': {e}") from e
    metadata.pop("version", None)
    return Checkpoint(arrays, metadata)


def require_effect(ckpt: Checkpoint, effect_id: str) -> None:
    """Raise EffectMismatch unless `ckpt` was trained for `effect_id`."""
    if ckpt.effect_id != effect_id:
        raise EffectMismatch(f"checkpoint was trained for '{ckpt.effect_id}', not '{effect_id}'")


def require_kind(ckpt: Checkpoint, kind: str) -> None:
    """Raise CorruptCheckpoint unless the sidecar marks `ckpt` as `kind`."""
    if ckpt.kind != kind:
        raise CorruptCheckpoint(f"expected a '{kind}' checkpoint, got '{ckpt.kind}'")
