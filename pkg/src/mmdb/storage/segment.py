"""Immutable segment files.

Layout::

    "MMD1" | version u16 | block* | footer

Each block is ``payload | crc32c u32``.  The footer holds the index-region
directory (u32 count, then length-prefixed column name + root handle u64/u32),
the data-block index handle, row_count u64, min/max seqno u64, the footer
length u32 and the trailing magic.
"""

from __future__ import annotations

import bisect
import os
import struct
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from mmdb.codec import HANDLE_SIZE, KeyCodec, RecordCodec, pack_handle, seal, unpack_handle
from mmdb.errors import CorruptionError, StorageError
from mmdb.storage.blocks import BlockCache, BlockHandle
from mmdb.types import Record, TableSchema

MAGIC = b"MMD1"
FORMAT_VERSION = 1
HEADER = MAGIC + struct.pack("<H", FORMAT_VERSION)
_TAIL = struct.Struct("<QIQQQI")  # data index handle, row_count, min/max seqno, footer len
TARGET_BLOCK_BYTES = 4096


class SegmentWriter:
    """Appends sealed blocks to a temporary file and finalizes it atomically."""

    def __init__(self, path: str, segment_id: int):
        self.path = path
        self.tmp_path = path + ".tmp"
        self.segment_id = segment_id
        self._f = open(self.tmp_path, "wb")
        self._f.write(HEADER)
        self._pos = len(HEADER)

    def add_block(self, payload: bytes) -> BlockHandle:
        if not payload:
            raise StorageError("empty block payload")
        block = seal(payload)
        self._f.write(block)
        h = BlockHandle(self.segment_id, self._pos, len(block))
        self._pos += len(block)
        return h

    def finish(self, index_regions: dict, data_index: BlockHandle, row_count: int,
               min_seqno: int, max_seqno: int, sync: bool = True) -> int:
        parts = [struct.pack("<I", len(index_regions))]
        for name in sorted(index_regions):
            h = index_regions[name]
            raw = name.encode("utf-8")
            parts.append(struct.pack("<H", len(raw)) + raw + pack_handle(h.offset, h.length))
        body = b"".join(parts)
        footer_len = len(body) + _TAIL.size + len(MAGIC)
        tail = _TAIL.pack(data_index.offset, data_index.length, row_count, min_seqno, max_seqno, footer_len)
        self._f.write(body + tail + MAGIC)
        self._pos += footer_len
        self._f.flush()
        if sync:
            os.fsync(self._f.fileno())
        self._f.close()
        os.replace(self.tmp_path, self.path)
        return self._pos

    def abort(self):
        try:
            self._f.close()
        finally:
            if os.path.exists(self.tmp_path):
                os.unlink(self.tmp_path)


@dataclass
class DataIndexEntry:
    first_key: Any
    last_key: Any
    handle: BlockHandle
    rows: int


def encode_data_index(keys: KeyCodec, entries: list[DataIndexEntry]) -> bytes:
    parts = [struct.pack("<I", len(entries))]
    for e in entries:
        parts.append(keys.encode(e.first_key))
        parts.append(keys.encode(e.last_key))
        parts.append(pack_handle(e.handle.offset, e.handle.length))
        parts.append(struct.pack("<I", e.rows))
    return b"".join(parts)


def decode_data_index(keys: KeyCodec, payload: bytes, segment_id: int) -> list[DataIndexEntry]:
    (n,) = struct.unpack_from("<I", payload, 0)
    pos = 4
    out = []
    for _ in range(n):
        first, pos = keys.decode_from(payload, pos)
        last, pos = keys.decode_from(payload, pos)
        off, ln = unpack_handle(payload, pos)
        pos += HANDLE_SIZE
        (rows,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        out.append(DataIndexEntry(first, last, BlockHandle(segment_id, off, ln), rows))
    return out


def write_data_blocks(writer: SegmentWriter, codec: RecordCodec, records: list[Record],
                      target: int = TARGET_BLOCK_BYTES):
    """Write sorted ``records`` as ~``target``-byte data blocks.

    Returns ``(data_index_entries, handle_of_each_record)``.
    """
    entries: list[DataIndexEntry] = []
    handles: list[BlockHandle] = []
    buf: list[bytes] = []
    size = 4
    first = None
    start = 0

    def flush(end):
        nonlocal buf, size, first, start
        payload = struct.pack("<I", len(buf)) + b"".join(buf)
        h = writer.add_block(payload)
        entries.append(DataIndexEntry(first, records[end - 1].key, h, len(buf)))
        handles.extend([h] * len(buf))
        buf, size, first, start = [], 4, None, end

    for i, rec in enumerate(records):
        enc = codec.encode_entry(rec)
        if buf and size + len(enc) > target:
            flush(i)
        if first is None:
            first = rec.key
        buf.append(enc)
        size += len(enc)
    if buf:
        flush(len(records))
    return entries, handles


@dataclass
class SegmentMeta:
    segment_id: int
    level: int
    path: str
    row_count: int
    min_seqno: int
    max_seqno: int
    file_size: int
    min_key: Any = None
    max_key: Any = None
    index_regions: dict = field(default_factory=dict)
    data_index: BlockHandle | None = None


class Segment:
    """Read side of one immutable segment file."""

    def __init__(self, meta: SegmentMeta, schema: TableSchema, codec: RecordCodec,
                 cache: BlockCache, table_uid: str):
        self.meta = meta
        self.schema = schema
        self.codec = codec
        self.cache = cache
        self.uid = (table_uid, meta.segment_id)
        self._fd = os.open(meta.path, os.O_RDONLY)
        self._lock = threading.Lock()
        self._pins = 0
        self._obsolete = False
        self._closed = False
        self._on_release: Callable | None = None
        # per-segment in-memory summaries, filled by the table after open/build
        self.keys: frozenset = frozenset()
        self.index_summaries: dict = {}
        self.stats: dict = {}
        self._data_index: list[DataIndexEntry] | None = None
        self._first_keys: list | None = None

    @property
    def segment_id(self) -> int:
        return self.meta.segment_id

    @property
    def level(self) -> int:
        return self.meta.level

    @property
    def row_count(self) -> int:
        return self.meta.row_count

    @property
    def index_regions(self) -> dict:
        return self.meta.index_regions

    @property
    def key_range(self):
        return (self.meta.min_key, self.meta.max_key)

    # -- pinning / lifecycle ------------------------------------------------

    def pin(self):
        with self._lock:
            self._pins += 1

    def unpin(self):
        with self._lock:
            self._pins -= 1
            doomed = self._pins == 0 and self._obsolete
        if doomed:
            self._delete()

    def mark_obsolete(self, on_release: Callable | None = None):
        with self._lock:
            self._obsolete = True
            self._on_release = on_release
            doomed = self._pins == 0
        if doomed:
            self._delete()

    @property
    def pinned(self) -> int:
        return self._pins

    def _delete(self):
        with self._lock:
            if self._closed:
                return
            self._closed = True
        try:
            os.close(self._fd)
        finally:
            self.cache.evict_prefix(self.uid)
            if os.path.exists(self.meta.path):
                os.unlink(self.meta.path)
            if self._on_release:
                self._on_release(self)

    def close(self):
        with self._lock:
            if self._closed:
                return
            self._closed = True
        os.close(self._fd)

    # -- block access ---------------------------------------------------------

    def _load(self, handle: BlockHandle) -> bytes:
        from mmdb.codec import unseal

        if handle.length <= 4 or handle.offset + handle.length > self.meta.file_size:
            raise StorageError(f"block handle {handle} out of bounds")
        raw = os.pread(self._fd, handle.length, handle.offset)
        if len(raw) != handle.length:
            raise CorruptionError("short block read")
        return unseal(raw)

    def read_block(self, handle: BlockHandle) -> bytes:
        """Return a verified block payload, from the cache when resident."""
        if handle.segment_id != self.segment_id:
            raise StorageError(f"handle {handle} does not belong to segment {self.segment_id}")
        return self.cache.get_or_load((self.uid, handle.offset), self.uid, lambda: self._load(handle)).data

    def read_decoded(self, handle: BlockHandle, name: str, decoder: Callable[[bytes], Any]):
        """Like :meth:`read_block` but memoizes ``decoder(payload)`` alongside the bytes."""
        if handle.segment_id != self.segment_id:
            raise StorageError(f"handle {handle} does not belong to segment {self.segment_id}")
        entry = self.cache.get_or_load((self.uid, handle.offset), self.uid, lambda: self._load(handle))
        out = entry.decoded.get(name)
        if out is None:
            out = decoder(entry.data)
            entry.decoded[name] = out
        return out

    def data_index(self) -> list[DataIndexEntry]:
        if self._data_index is None:
            payload = self.read_block(self.meta.data_index)
            self._data_index = decode_data_index(self.codec.keys, payload, self.segment_id)
            self._first_keys = [e.first_key for e in self._data_index]
        return self._data_index

    def read_records(self, handle: BlockHandle) -> dict:
        """Decoded data block as ``key -> Record``."""
        return self.read_decoded(handle, "records", self._decode_records)

    def _decode_records(self, payload: bytes) -> dict:
        return {r.key: r for r in self.codec.decode_block(payload)}

    def get(self, key) -> Record | None:
        if key not in self.keys:
            return None
        idx = self.data_index()
        i = bisect.bisect_right(self._first_keys, key) - 1
        if i < 0 or idx[i].last_key < key:
            return None
        return self.read_records(idx[i].handle).get(key)

    def fetch(self, key, handle: BlockHandle) -> Record | None:
        return self.read_records(handle).get(key)

    def scan(self):
        """All entries (including tombstones) in key order."""
        for e in self.data_index():
            recs = self.read_records(e.handle)
            yield from recs.values()

    def read_footer(self):
        return read_footer(self._fd, self.meta.file_size, self.segment_id, self.codec.keys)


def read_footer(fd: int, file_size: int, segment_id: int, keys: KeyCodec):
    tail_len = _TAIL.size + len(MAGIC)
    if file_size < len(HEADER) + tail_len:
        raise CorruptionError("segment file too small")
    head = os.pread(fd, len(HEADER), 0)
    if head[:4] != MAGIC:
        raise CorruptionError("bad segment header magic")
    tail = os.pread(fd, tail_len, file_size - tail_len)
    if tail[-4:] != MAGIC:
        raise CorruptionError("bad segment footer magic")
    di_off, di_len, rows, min_s, max_s, footer_len = _TAIL.unpack_from(tail, 0)
    body = os.pread(fd, footer_len - tail_len, file_size - footer_len)
    (n,) = struct.unpack_from("<I", body, 0)
    pos = 4
    regions = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + ln].decode("utf-8")
        pos += ln
        off, hl = unpack_handle(body, pos)
        pos += HANDLE_SIZE
        regions[name] = BlockHandle(segment_id, off, hl)
    return {
        "index_regions": regions,
        "data_index": BlockHandle(segment_id, di_off, di_len),
        "row_count": rows,
        "min_seqno": min_s,
        "max_seqno": max_s,
    }
