"""Versioned binary checkpoints: a named table of float64 tensors.

Layout (integers little-endian):

  magic b"MMNW" | version u32 | entry_count u32
  per entry (sorted by name for byte-stable output):
    name_len u16 | name utf-8 | ndim u8 | dims u32 x ndim | data f64 LE

Round-trips are bit-exact; readers reject wrong magic/version, truncation
(reported with the failing offset) and trailing bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MMNW_MAGIC = b"MMNW"
MMNW_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_weights(path, weights: dict) -> None:
    names = sorted(weights)
    with open(path, "wb") as fh:
        fh.write(MMNW_MAGIC)
        fh.write(struct.pack("<II", MMNW_VERSION, len(names)))
        for name in names:
            arr = np.ascontiguousarray(weights[name], dtype="<f8")
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise CheckpointError(f"parameter name too long: {name[:40]}...")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_weights(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()

    def need(offset, count, what):
        if offset + count > len(raw):
            raise CheckpointError(
                f"truncated checkpoint: need {count} bytes for {what} at offset {offset}, "
                f"have {len(raw) - offset}"
            )

    need(0, 4, "magic")
    if raw[:4] != MMNW_MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}, expected {MMNW_MAGIC!r}")
    need(4, 8, "header")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != MMNW_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out = {}
    for _ in range(count):
        need(off, 2, "name length")
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        need(off, name_len, "name")
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        need(off, 1, "ndim")
        ndim = raw[off]
        off += 1
        need(off, 4 * ndim, "dims")
        dims = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        need(off, 8 * size, f"tensor data for {name!r}")
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(dims)
        off += 8 * size
        out[name] = arr.astype(np.float64)
    if off != len(raw):
        raise CheckpointError(f"{len(raw) - off} trailing bytes after the parameter table")
    return out
