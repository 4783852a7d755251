"""Versioned binary container for named float64 arrays.

Layout (little-endian):
    magic b"F4DW" | u32 format version | records | u32 CRC32 footer
Each record:
    u32 name length | utf-8 name | u32 rank | u32 dims... | f64 data
Records are written in sorted-name order; the CRC covers every byte
before the footer and loading fails loudly on any mismatch.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from ..errors import ChecksumError, VersionError

MAGIC = b"F4DW"
FORMAT_VERSION = 1


def save_arrays(path, arrays):
    """Write a dict of name -> float64 ndarray."""
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.astype("<f8").tobytes())
    body = b"".join(chunks)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", crc))


def load_arrays(path):
    """Read a dict of name -> float64 ndarray, verifying magic, version, CRC."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise VersionError(f"{path}: not a weight file (bad magic)")
    body, footer = blob[:-4], blob[-4:]
    (crc_stored,) = struct.unpack("<I", footer)
    if (zlib.crc32(body) & 0xFFFFFFFF) != crc_stored:
        raise ChecksumError(f"{path}: CRC32 mismatch (corrupt file)")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version}")
    arrays = {}
    off = 8
    end = len(body)
    while off < end:
        (nlen,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", body, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", body, off) if rank else ()
        off += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(dims)
        off += 8 * count
        arrays[name] = np.array(arr)
    return arrays
