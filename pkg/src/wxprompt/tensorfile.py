"""Binary container for named dense tensors.

Layout (all integers little-endian):

    bytes 0-7    magic ``b"WXTENSR\\0"``
    bytes 8-11   u32 format version (currently 1)
    bytes 12-19  u64 length of the table-of-contents block
    ...          table of contents (see below)
    ...          payload: tensor buffers, row-major, concatenated
    last 4       u32 CRC-32C over (table of contents + payload)

Table of contents: u32 tensor count, then per tensor
``u16 name_len | name utf-8 | u8 dtype code | u8 rank | u64 x rank dims |
u64 payload offset | u64 byte length``. Offsets never overlap and the
reader refuses to expose any data before magic, version and checksum all
validate, so a truncated or corrupted file never yields partial tensors.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError, UsageError

MAGIC = b"WXTENSR\x00"
VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.uint8): 2,
    np.dtype(np.int64): 3,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def _build_crc32c_tables() -> list[list[int]]:
    # Castagnoli polynomial, reflected form; slice-by-8 tables.
    poly = 0x82F63B78
    tables = [[0] * 256 for _ in range(8)]
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ (poly if crc & 1 else 0)
        tables[0][i] = crc
    for i in range(256):
        crc = tables[0][i]
        for t in range(1, 8):
            crc = tables[0][crc & 0xFF] ^ (crc >> 8)
            tables[t][i] = crc
    return tables


_CRC_TABLES = _build_crc32c_tables()


def crc32c(data: bytes, crc: int = 0) -> int:
    """CRC-32C (Castagnoli) of ``data``, chainable via ``crc``."""
    t0, t1, t2, t3, t4, t5, t6, t7 = _CRC_TABLES
    crc ^= 0xFFFFFFFF
    n = len(data)
    i = 0
    end8 = n - (n % 8)
    while i < end8:
        (word,) = struct.unpack_from("<Q", data, i)
        word ^= crc
        crc = (
            t7[word & 0xFF]
            ^ t6[(word >> 8) & 0xFF]
            ^ t5[(word >> 16) & 0xFF]
            ^ t4[(word >> 24) & 0xFF]
            ^ t3[(word >> 32) & 0xFF]
            ^ t2[(word >> 40) & 0xFF]
            ^ t1[(word >> 48) & 0xFF]
            ^ t0[(word >> 56) & 0xFF]
        )
        i += 8
    while i < n:
        crc = t0[(crc ^ data[i]) & 0xFF] ^ (crc >> 8)
        i += 1
    return crc ^ 0xFFFFFFFF


def write_tensor_file(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays to ``path``; round-trips bit-exactly via the reader."""
    names = list(tensors.keys())
    if len(set(names)) != len(names):
        raise UsageError("tensor names must be unique")

    toc = bytearray()
    toc += struct.pack("<I", len(names))
    payload = bytearray()
    for name in names:
        arr = np.asarray(tensors[name])
        if arr.dtype not in _DTYPE_CODES:
            raise UsageError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = arr.tobytes()  # always row-major, regardless of input strides
        encoded = name.encode("utf-8")
        toc += struct.pack("<H", len(encoded))
        toc += encoded
        toc += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        toc += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        toc += struct.pack("<QQ", len(payload), len(raw))
        payload += raw

    body = bytes(toc) + bytes(payload)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(toc)))
        fh.write(body)
        fh.write(struct.pack("<I", crc32c(body)))


def read_tensor_file(path) -> dict[str, np.ndarray]:
    """Read a container written by :func:`write_tensor_file`.

    Raises :class:`DataError` on bad magic, unknown version, checksum
    mismatch, truncation, or overlapping payload ranges.
    """
    with open(path, "rb") as fh:
        blob = fh.read()

    if len(blob) < len(MAGIC) + 4 + 8 + 4:
        raise DataError(f"{path}: truncated container (only {len(blob)} bytes)")
    if blob[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: bad magic bytes, not a tensor container")
    (version,) = struct.unpack_from("<I", blob, len(MAGIC))
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    (toc_len,) = struct.unpack_from("<Q", blob, len(MAGIC) + 4)

    body_start = len(MAGIC) + 4 + 8
    body = blob[body_start:-4]
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if len(body) < toc_len:
        raise DataError(f"{path}: truncated container (header claims {toc_len} TOC bytes)")
    if crc32c(body) != stored_crc:
        raise DataError(f"{path}: checksum mismatch, refusing corrupted data")

    toc = body[:toc_len]
    payload = body[toc_len:]
    pos = 0
    (count,) = struct.unpack_from("<I", toc, pos)
    pos += 4
    out: dict[str, np.ndarray] = {}
    claimed: list[tuple[int, int]] = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", toc, pos)
        pos += 2
        name = toc[pos : pos + name_len].decode("utf-8")
        pos += name_len
        dtype_code, rank = struct.unpack_from("<BB", toc, pos)
        pos += 2
        dims = struct.unpack_from(f"<{rank}Q", toc, pos)
        pos += 8 * rank
        offset, nbytes = struct.unpack_from("<QQ", toc, pos)
        pos += 16
        if dtype_code not in _CODE_DTYPES:
            raise DataError(f"{path}: unknown dtype code {dtype_code}")
        dtype = _CODE_DTYPES[dtype_code]
        if offset + nbytes > len(payload):
            raise DataError(f"{path}: tensor {name!r} payload out of bounds")
        for lo, hi in claimed:
            if offset < hi and lo < offset + nbytes:
                raise DataError(f"{path}: tensor {name!r} overlaps another payload range")
        claimed.append((offset, offset + nbytes))
        expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected:
            raise DataError(f"{path}: tensor {name!r} length {nbytes} != shape implies {expected}")
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype=dtype).reshape(dims)
        out[name] = arr.copy()  # decouple from the file buffer
    return out
