"""Binary checkpoint container for model parameters plus their configuration.

Layout (little-endian throughout):

    magic    8 bytes  b"OBSGENCK"
    version  1 byte
    cfg_len  u32      length of the UTF-8 config JSON (sorted keys)
    cfg      bytes
    count    u32      number of parameters
    per parameter:
        name_len u16, name utf-8, ndim u8, dims u32 each, values f64 row-major

Loading validates every name and shape against the expected layout and fails
loudly on any mismatch.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

MAGIC = b"OBSGENCK"
VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: dict) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", VERSION)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(cfg))
    out += cfg
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        out += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += arr.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: bad magic header, not a checkpoint file")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<B", raw, pos)
    pos += 1
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    config = json.loads(raw[pos : pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = []
        for _ in range(ndim):
            (dim,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape.append(dim)
        n = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).copy()
        pos += n * 8
        arrays[name] = values.reshape(shape)
    if pos != len(raw):
        raise DataError(f"{path}: {len(raw) - pos} trailing bytes after last parameter")
    return arrays, config


def validate_layout(arrays: dict[str, np.ndarray], expected: dict[str, tuple]) -> None:
    """Check checkpoint names/shapes against a model's expected layout."""
    missing = set(expected) - set(arrays)
    extra = set(arrays) - set(expected)
    if missing or extra:
        raise ConfigError(
            f"checkpoint layout mismatch; missing={sorted(missing)} extra={sorted(extra)}"
        )
    for name, shape in expected.items():
        if tuple(arrays[name].shape) != tuple(shape):
            raise ConfigError(
                f"checkpoint shape mismatch for {name}: {arrays[name].shape} vs {shape}"
            )
