"""
Binary checkpoint files.

Layout (all integers little-endian):
    magic      8 bytes  b"MRLNCKPT"
    version    uint32
    precision  uint8    1 = float32, 2 = float64
    meta_len   uint32, then meta_len bytes of UTF-8 JSON (CheckpointMeta)
    count      uint32, then per array:
        name_len uint16, name (UTF-8), ndim uint8, ndim x uint32 dims,
        offset uint64 (from the start of the data block), nbytes uint64
    data block: raw little-endian arrays in table order
"""
import io
import logging
import os
import struct
from dataclasses import dataclass
from typing import Dict

import numpy as np
from pydantic import ValidationError
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_fixed

from merlin.core.errors import CheckpointError
from merlin.schemas.checkpoint import CheckpointMeta

logger = logging.getLogger(__name__)

MAGIC = b"MRLNCKPT"
VERSION = 1
PRECISION_CODES = {"float32": 1, "float64": 2}
ADAM_M = "adam/m/"
ADAM_V = "adam/v/"


@dataclass
class Checkpoint:
    meta: CheckpointMeta
    arrays: Dict[str, np.ndarray]

    def params(self) -> Dict[str, Dict[str, np.ndarray]]:
        return {group: {name: self.arrays[name] for name in names} for group, names in self.meta.groups.items()}

    def moments(self, prefix: str) -> Dict[str, np.ndarray]:
        return {name[len(prefix):]: value for name, value in self.arrays.items() if name.startswith(prefix)}


def encode(meta: CheckpointMeta, arrays: Dict[str, np.ndarray]) -> bytes:
    dtype = np.dtype(meta.precision).newbyteorder("<")
    meta_bytes = meta.model_dump_json().encode("utf-8")
    table = io.BytesIO()
    data = io.BytesIO()
    for name, value in arrays.items():
        value = np.asarray(value)
        raw = np.ascontiguousarray(value, dtype=dtype).tobytes()
        encoded = name.encode("utf-8")
        table.write(struct.pack("<H", len(encoded)))
        table.write(encoded)
        table.write(struct.pack("<B", value.ndim))
        table.write(struct.pack(f"<{value.ndim}I", *value.shape))
        table.write(struct.pack("<QQ", data.tell(), len(raw)))
        data.write(raw)
    header = MAGIC + struct.pack("<IBI", VERSION, PRECISION_CODES[meta.precision], len(meta_bytes))
    return header + meta_bytes + struct.pack("<I", len(arrays)) + table.getvalue() + data.getvalue()


def decode(blob: bytes) -> Checkpoint:
    view = memoryview(blob)
    pos = 0

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise CheckpointError("Truncated checkpoint")
        values = struct.unpack_from(fmt, view, pos)
        pos += size
        return values

    if bytes(view[:len(MAGIC)]) != MAGIC:
        raise CheckpointError("Not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    version, precision_code, meta_len = take("<IBI")
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}, expected {VERSION}")
    codes = {code: name for name, code in PRECISION_CODES.items()}
    if precision_code not in codes:
        raise CheckpointError(f"Unknown precision code {precision_code}")
    try:
        meta = CheckpointMeta.model_validate_json(bytes(view[pos:pos + meta_len]))
    except ValidationError as e:
        raise CheckpointError(f"Invalid checkpoint metadata: {e}") from e
    pos += meta_len
    if meta.precision != codes[precision_code]:
        raise CheckpointError("Precision code does not match metadata")
    dtype = np.dtype(meta.precision).newbyteorder("<")
    (count,) = take("<I")
    entries = []
    for _ in range(count):
        (name_len,) = take("<H")
        name = bytes(view[pos:pos + name_len]).decode("utf-8")
        pos += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        offset, nbytes = take("<QQ")
        entries.append((name, shape, offset, nbytes))
    arrays = {}
    for name, shape, offset, nbytes in entries:
        start = pos + offset
        if start + nbytes > len(view):
            raise CheckpointError(f"Array {name} runs past the end of the file")
        flat = np.frombuffer(view[start:start + nbytes], dtype=dtype)
        arrays[name] = flat.reshape(shape).astype(meta.precision)
    return Checkpoint(meta, arrays)


@retry(retry=retry_if_exception_type(OSError), stop=stop_after_attempt(3), wait=wait_fixed(0.5), reraise=True)
def _write_atomic(path: str, blob: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(blob)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def save(path: str, meta: CheckpointMeta, arrays: Dict[str, np.ndarray]) -> None:
    """Write a checkpoint atomically (temp file then rename)."""
    try:
        _write_atomic(path, encode(meta, arrays))
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint {path} at {meta.env_steps} env steps")


def load(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    checkpoint = decode(blob)
    logger.info(f"Loaded checkpoint {path} ({checkpoint.meta.agent}, {checkpoint.meta.env_steps} env steps)")
    return checkpoint
