"""Portable weight-file format (".sfw").

Layout, all little-endian:

    magic   4 bytes  "SFW1"
    u32     format version (currently 1)
    u32     entry count
    entry*  u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims,
            u8 dtype code (0 = 32-bit float), raw row-major payload
    u32     CRC32 of everything after the magic

Entries appear in canonical order (see network.CANONICAL_ENTRIES); kernels
are stored rank-4, biases rank-1. Load validates the magic, version, CRC,
entry layout and the shape chain, and reports distinct error codes for each
failure mode.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import WeightFormatError
from .network import CANONICAL_ENTRIES, NetworkParams, validate_shape_chain

MAGIC = b"SFW1"
FORMAT_VERSION = 1
DTYPE_REAL32 = 0


def _entry_bytes(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw
    head += struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += struct.pack("<B", DTYPE_REAL32)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return head + payload


def save_weights(params: NetworkParams, path) -> None:
    """Write params in canonical order; save -> load -> save is byte-stable."""
    named = params.named()
    body = struct.pack("<I", FORMAT_VERSION)
    body += struct.pack("<I", len(CANONICAL_ENTRIES))
    for entry in CANONICAL_ENTRIES:
        t = named[entry]
        if not np.isfinite(t.data).all():
            raise WeightFormatError("non_finite", f"{entry} contains NaN or infinity")
        arr = t.data
        if entry.endswith(".b"):
            arr = arr.reshape(arr.shape[1])  # biases stored as flat vectors
        body += _entry_bytes(entry, arr)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(MAGIC + body + struct.pack("<I", crc))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise WeightFormatError("truncated",
                                    f"file ends {self.pos + n - len(self.blob)} bytes early")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_weights(path) -> NetworkParams:
    """Read and validate a ".sfw" file."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise WeightFormatError("bad_magic", f"not a weight file: {path}")
    if len(blob) < 12:
        raise WeightFormatError("truncated", "missing header")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[4:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise WeightFormatError("bad_crc",
                                f"checksum {stored_crc:#010x} != computed {actual_crc:#010x}")

    r = _Reader(blob[4:-4])
    version = r.u32()
    if version != FORMAT_VERSION:
        raise WeightFormatError("bad_version", f"unsupported format version {version}")
    count = r.u32()
    if count != len(CANONICAL_ENTRIES):
        raise WeightFormatError("bad_layout",
                                f"expected {len(CANONICAL_ENTRIES)} entries, found {count}")

    named: dict[str, Tensor] = {}
    for expected_name in CANONICAL_ENTRIES:
        name = r.take(r.u16()).decode("utf-8")
        if name != expected_name:
            raise WeightFormatError("bad_layout",
                                    f"entry {name!r} out of order; expected {expected_name!r}")
        ndim = r.u8()
        dims = tuple(r.u32() for _ in range(ndim))
        size = 1
        for d in dims:
            size *= d
        dtype = r.u8()
        if dtype != DTYPE_REAL32:
            raise WeightFormatError("bad_dtype", f"{name}: dtype code {dtype} unsupported")
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims)
        if name.endswith(".b"):
            if ndim != 1:
                raise WeightFormatError("shape_chain", f"{name} must be rank 1, got rank {ndim}")
            arr = arr.reshape(1, dims[0], 1, 1)
        elif ndim != 4:
            raise WeightFormatError("shape_chain", f"{name} must be rank 4, got rank {ndim}")
        named[name] = Tensor(arr.astype(np.float32), name=name)
    if r.pos != len(r.blob):
        raise WeightFormatError("bad_layout", f"{len(r.blob) - r.pos} trailing bytes")

    try:
        plan = validate_shape_chain(named)
    except Exception as exc:
        raise WeightFormatError("shape_chain", str(exc)) from None
    meta = {"format_version": version, "source": str(path)}
    meta.update(plan)
    return NetworkParams.from_named(named, meta)
