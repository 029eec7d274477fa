"""Append-only on-disk vector cache.

Byte layout (all integers little-endian)::

    header   "OCVC" | u16 version (=1) | u16 reserved (=0)
    record   "R" | u16 key_len | key (utf-8) | u32 dim | dim x f32 | u32 crc32
    footer   "I" | u32 count | count x (u16 key_len | key | u64 record_offset | u32 dim)
             | u32 crc32 | u64 footer_offset | "OCVF"

A record's crc32 covers every byte from its "R" tag through its last
value; the footer crc covers "I" through the last index entry. Keys are
``<sha256 hex of the embedded text>|<provider tag>``. The footer is
rewritten on close; new records are appended over the old footer. A file
without a valid footer (crash before close) is recovered by scanning
records and dropping the first corrupt one and everything after it.
"""
from __future__ import annotations

import hashlib
import logging
import os
import struct
import threading
import zlib
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"OCVC"
FOOTER_MAGIC = b"OCVF"
VERSION = 1
HEADER = MAGIC + struct.pack("<HH", VERSION, 0)
_TRAILER = struct.Struct("<IQ4s")  # footer crc, footer offset, magic


class CacheCorruption(Exception):
    pass


def cache_key(text: str, provider_tag: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest() + "|" + provider_tag


def encode_record(key: str, values: np.ndarray) -> bytes:
    kb = key.encode("utf-8")
    vals = np.ascontiguousarray(values, dtype="<f4")
    body = b"R" + struct.pack("<H", len(kb)) + kb + struct.pack("<I", vals.size) + vals.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def _decode_record(buf: bytes, pos: int) -> Tuple[str, np.ndarray, int]:
    """Decode the record at ``pos``; return key, values, next offset."""
    if buf[pos:pos + 1] != b"R":
        raise CacheCorruption(f"no record tag at offset {pos}")
    (klen,) = struct.unpack_from("<H", buf, pos + 1)
    kend = pos + 3 + klen
    if kend + 4 > len(buf):
        raise CacheCorruption(f"truncated record at offset {pos}")
    key = buf[pos + 3:kend].decode("utf-8")
    (dim,) = struct.unpack_from("<I", buf, kend)
    vend = kend + 4 + 4 * dim
    if vend + 4 > len(buf):
        raise CacheCorruption(f"truncated record at offset {pos}")
    (crc,) = struct.unpack_from("<I", buf, vend)
    if zlib.crc32(buf[pos:vend]) != crc:
        raise CacheCorruption(f"checksum mismatch at offset {pos}")
    values = np.frombuffer(buf, dtype="<f4", count=dim, offset=kend + 4).astype(np.float32)
    return key, values, vend + 4


class VectorCache:
    """Persistent map from cache key to float32 vector.

    Reads may run concurrently; writes go through one lock-guarded append
    stream. Use as a context manager or call :meth:`close` to write the
    index footer.
    """

    def __init__(self, path: os.PathLike | str) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._index: Dict[str, int] = {}
        self._dims: Dict[str, int] = {}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with open(self.path, "wb") as fh:
                fh.write(HEADER)
        self._fh = open(self.path, "r+b")
        self._end = self._load()
        self._fh.truncate(self._end)

    # loading -------------------------------------------------------------

    def _load(self) -> int:
        fd = self._fh.fileno()
        size = os.fstat(fd).st_size
        head = os.pread(fd, len(HEADER), 0)
        if head[:4] != MAGIC:
            raise CacheCorruption(f"{self.path}: not a vector cache file")
        (version,) = struct.unpack_from("<H", head, 4)
        if version != VERSION:
            raise CacheCorruption(f"{self.path}: unsupported cache version {version}")
        end = self._read_footer(fd, size)
        if end is not None:
            return end
        self._index.clear()
        self._dims.clear()
        return self._scan(fd, size)

    def _read_footer(self, fd: int, size: int) -> Optional[int]:
        if size < len(HEADER) + _TRAILER.size:
            return None
        crc, foff, magic = _TRAILER.unpack(os.pread(fd, _TRAILER.size, size - _TRAILER.size))
        fend = size - _TRAILER.size
        if magic != FOOTER_MAGIC or not len(HEADER) <= foff < fend:
            return None
        footer = os.pread(fd, fend - foff, foff)
        if footer[:1] != b"I" or zlib.crc32(footer) != crc:
            return None
        (count,) = struct.unpack_from("<I", footer, 1)
        pos = 5
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", footer, pos)
            key = footer[pos + 2:pos + 2 + klen].decode("utf-8")
            off, dim = struct.unpack_from("<QI", footer, pos + 2 + klen)
            pos += 14 + klen
            self._index[key] = off
            self._dims[key] = dim
        return foff

    def _scan(self, fd: int, size: int) -> int:
        pos = len(HEADER)
        while pos < size:
            try:
                head = os.pread(fd, 3, pos)
                (klen,) = struct.unpack_from("<H", head, 1)
                (dim,) = struct.unpack("<I", os.pread(fd, 4, pos + 3 + klen))
                if pos + 3 + klen + 4 + 4 * dim + 4 > size:
                    raise CacheCorruption(f"truncated record at offset {pos}")
                rec = os.pread(fd, 3 + klen + 4 + 4 * dim + 4, pos)
                key, values, nxt = _decode_record(rec, 0)
            except (CacheCorruption, struct.error, UnicodeDecodeError) as exc:
                log.warning("%s: dropping cache tail from offset %d (%s)", self.path, pos, exc)
                break
            self._index[key] = pos
            self._dims[key] = values.size
            pos += nxt
        return pos

    # access --------------------------------------------------------------

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self._index)

    def keys(self) -> Iterator[str]:
        return iter(sorted(self._index))

    def get(self, key: str) -> Optional[np.ndarray]:
        off = self._index.get(key)
        if off is None:
            return None
        size = 3 + len(key.encode("utf-8")) + 4 + 4 * self._dims[key] + 4
        buf = os.pread(self._fh.fileno(), size, off)
        try:
            k, values, _ = _decode_record(buf, 0)
            if k != key:
                raise CacheCorruption(f"index points at {k!r}")
        except (CacheCorruption, struct.error, UnicodeDecodeError) as exc:
            # treat as a miss; the caller recomputes and put() appends a fresh record
            log.warning("%s: dropping corrupt entry %s (%s)", self.path, key, exc)
            with self._lock:
                self._index.pop(key, None)
                self._dims.pop(key, None)
            return None
        return values

    def put(self, key: str, values: np.ndarray) -> None:
        rec = encode_record(key, values)
        with self._lock:
            if key in self._index:
                return
            os.pwrite(self._fh.fileno(), rec, self._end)
            self._index[key] = self._end
            self._dims[key] = int(np.size(values))
            self._end += len(rec)

    # footer --------------------------------------------------------------

    def flush(self) -> None:
        with self._lock:
            if self._fh.closed:
                return
            parts = [b"I", struct.pack("<I", len(self._index))]
            for key in sorted(self._index):
                kb = key.encode("utf-8")
                parts.append(struct.pack("<H", len(kb)) + kb + struct.pack("<QI", self._index[key], self._dims[key]))
            footer = b"".join(parts)
            footer += _TRAILER.pack(zlib.crc32(footer), self._end, FOOTER_MAGIC)
            os.pwrite(self._fh.fileno(), footer, self._end)
            self._fh.truncate(self._end + len(footer))
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh.closed:
            return
        self.flush()
        self._fh.close()

    def __enter__(self) -> "VectorCache":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
