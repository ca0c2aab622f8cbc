"""One LSM table: write buffer, WAL, segment catalog, flush, compaction and recovery."""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator

from mmdb.codec import RecordCodec
from mmdb.errors import SchemaError, StorageError
from mmdb.index.framework import GlobalIndex, build_segment_indexes, load_segment_summaries
from mmdb.stats import segment_stats
from mmdb.storage.blocks import BlockCache, BlockHandle
from mmdb.storage.memtable import Memtable
from mmdb.storage.segment import (
    Segment,
    SegmentMeta,
    SegmentWriter,
    encode_data_index,
    read_footer,
    write_data_blocks,
)
from mmdb.storage.wal import WalWriter, replay
from mmdb.types import Record, TableSchema

log = logging.getLogger(__name__)

MANIFEST = "MANIFEST"
_SEG_RE = re.compile(r"^seg-(\d+)\.seg$")
_WAL_RE = re.compile(r"^wal-(\d+)\.log$")
_uid_counter = itertools.count()


@dataclass
class TableConfig:
    flush_threshold_bytes: int = 8 * 1024 * 1024
    compaction_trigger: int = 4  # segments per tier that trigger a merge
    max_immutable_memtables: int = 16  # writers stall beyond this many unflushed buffers
    wal_sync: str = "batch"  # batch | always | off
    wal_batch: int = 1024  # frames per fsync in batch mode
    background: bool = True
    auto_compact: bool = True
    seed: int = 0
    fsync_segments: bool = True


@dataclass
class TableMetrics:
    flushes: int = 0
    compactions: int = 0
    stall_count: int = 0
    stall_seconds: float = 0.0
    bytes_flushed: int = 0
    bytes_compacted: int = 0
    rows_flushed: int = 0
    background_errors: list = field(default_factory=list)


class Snapshot:
    """A consistent read view: every write with ``seqno <= seqno_bound``.

    Holds the memtables and segments that were live when it was taken; the
    segments are pinned (not unlinked) until :meth:`release`.
    """

    def __init__(self, table: "Table", bound: int, memtables: list, segments: list):
        self.table = table
        self.seqno_bound = bound
        self.memtables = memtables  # newest first
        self.segments = segments  # newest first
        self._released = False

    @property
    def pinned_segments(self) -> set:
        return {s.segment_id for s in self.segments}

    @property
    def memtable_view(self) -> list:
        return self.memtables

    def release(self):
        if not self._released:
            self._released = True
            for s in self.segments:
                s.unpin()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.release()

    def __del__(self):
        try:
            self.release()
        except Exception:  # pragma: no cover - interpreter shutdown
            pass

    def get(self, key) -> Record | None:
        for m in self.memtables:
            r = m.lookup(key, self.seqno_bound)
            if r is not None:
                return None if r.tombstone else r
        for s in self.segments:
            if key in s.keys:
                r = s.get(key)
                if r is not None:
                    return None if r.tombstone else r
        return None

    def source_of(self, key):
        """``(source index, record)`` of the newest version of ``key``, tombstones included."""
        for i, m in enumerate(self.memtables):
            r = m.lookup(key, self.seqno_bound)
            if r is not None:
                return i, r
        for j, s in enumerate(self.segments):
            if key in s.keys:
                r = s.get(key)
                if r is not None:
                    return len(self.memtables) + j, r
        return None, None

    def scan(self) -> Iterator[Record]:
        """Live rows in primary-key order."""
        sources: list[Iterable[Record]] = [m.visible(self.seqno_bound) for m in self.memtables]
        sources += [s.scan() for s in self.segments]
        tagged = [((r.key, rank, r) for r in src) for rank, src in enumerate(sources)]
        last = _SENTINEL
        for key, _, r in heapq.merge(*tagged, key=lambda t: (t[0], t[1])):
            if key == last:
                continue
            last = key
            if not r.tombstone:
                yield r

    def memtable_rows(self) -> list[Record]:
        """Newest visible memtable version of each key held in memory (tombstones included)."""
        seen: dict = {}
        for m in self.memtables:
            for r in m.visible(self.seqno_bound):
                if r.key not in seen:
                    seen[r.key] = r
        return [seen[k] for k in sorted(seen)]

    def memtable_contains(self, key) -> bool:
        return any(m.lookup(key, self.seqno_bound) is not None for m in self.memtables)


_SENTINEL = object()


class Table:
    def __init__(self, path: str, schema: TableSchema, cache: BlockCache,
                 config: TableConfig | None = None, create: bool = False):
        self.path = path
        self.schema = schema
        self.cache = cache
        self.config = config or TableConfig()
        self.codec = RecordCodec(schema)
        self.uid = f"{schema.table_name}#{next(_uid_counter)}"
        self.metrics = TableMetrics()
        self.global_index = GlobalIndex(schema)
        self._lock = threading.RLock()  # catalog state
        self._write_lock = threading.Lock()  # serializes writers
        self._work_lock = threading.RLock()  # serializes flush / compaction
        self._cond = threading.Condition(self._lock)
        self._listeners: list[Callable[[Record], None]] = []
        self._segments: list[Segment] = []  # oldest first
        self._immutables: list[Memtable] = []  # oldest first
        self._seqno = 0
        self._next_id = 1
        self._closed = False
        self._wal_pending = 0
        os.makedirs(path, exist_ok=True)
        if create:
            self._write_manifest()
        else:
            self._recover()
        self._active = self._new_memtable()
        self._worker: threading.Thread | None = None
        if self.config.background:
            self._worker = threading.Thread(target=self._run_worker, name=f"mmdb-bg-{schema.table_name}",
                                            daemon=True)
            self._worker.start()
            with self._lock:
                if self._immutables:
                    self._cond.notify_all()

    # -- properties -----------------------------------------------------------

    @property
    def name(self) -> str:
        return self.schema.table_name

    @property
    def seqno(self) -> int:
        return self._seqno

    @property
    def segments(self) -> list[Segment]:
        """Live segments, newest first."""
        with self._lock:
            return list(reversed(self._segments))

    def segment(self, segment_id: int) -> Segment:
        with self._lock:
            for s in self._segments:
                if s.segment_id == segment_id:
                    return s
        raise StorageError(f"no live segment {segment_id}")

    @property
    def memtable_bytes(self) -> int:
        return self._active.size_bytes

    def add_listener(self, fn: Callable[[Record], None]):
        """``fn(record)`` is called after every put/delete (tombstones for deletes)."""
        self._listeners.append(fn)

    def remove_listener(self, fn):
        if fn in self._listeners:
            self._listeners.remove(fn)

    # -- writes ---------------------------------------------------------------

    def put(self, record) -> int:
        """Insert or overwrite a row; ``record`` is an attribute dict or a :class:`Record`."""
        attrs = record.attrs if isinstance(record, Record) else record
        attrs = self.schema.coerce(attrs)
        key = attrs[self.schema.primary_key]
        if isinstance(record, Record) and record.key is not None and record.key != key:
            raise SchemaError("record key does not match primary key attribute")
        return self._write(key, attrs, False)

    def put_many(self, records: Iterable) -> int:
        last = 0
        for r in records:
            last = self.put(r)
        self.sync_wal()
        return last

    def delete(self, key) -> int:
        key = self.schema.coerce({self.schema.primary_key: key})[self.schema.primary_key]
        return self._write(key, {}, True)

    def _write(self, key, attrs: dict, tombstone: bool) -> int:
        self._check_open()
        with self._write_lock:
            seqno = self._seqno + 1
            rec = Record(key, attrs, seqno, tombstone)
            entry = self.codec.encode_entry(rec)
            mem = self._active
            mem.wal.append(entry)
            self._wal_pending += 1
            if self.config.wal_sync == "batch" and self._wal_pending >= self.config.wal_batch:
                mem.wal.sync()
                self._wal_pending = 0
            mem.add(rec, len(entry))
            # listeners see the write before any snapshot can include it
            for fn in self._listeners:
                fn(rec)
            self._seqno = seqno
            if mem.size_bytes >= self.config.flush_threshold_bytes:
                self._rotate()
        return seqno

    def sync_wal(self):
        with self._write_lock:
            self._active.wal.sync()
            self._wal_pending = 0

    def _new_memtable(self) -> Memtable:
        with self._lock:
            wid = self._next_id
            self._next_id += 1
        m = Memtable(wal_id=wid)
        m.wal = WalWriter(self._wal_path(wid), self.config.wal_sync)
        return m

    def _rotate(self):
        """Swap in a fresh memtable; the old one is queued for flushing."""
        old = self._active
        if old.entries == 0:
            return
        old.freeze()
        old.wal.sync()
        old.wal.close()
        self._wal_pending = 0
        new = self._new_memtable()
        with self._lock:
            self._immutables.append(old)
            self._active = new
            self._cond.notify_all()
        if not self.config.background:
            self._flush_pending()
            return
        limit = self.config.max_immutable_memtables
        if len(self._immutables) > limit:
            t0 = time.perf_counter()
            self.metrics.stall_count += 1
            with self._lock:
                while len(self._immutables) > limit and not self._closed:
                    self._cond.wait(0.05)
            self.metrics.stall_seconds += time.perf_counter() - t0

    # -- reads ----------------------------------------------------------------

    def snapshot(self) -> Snapshot:
        with self._lock:
            bound = self._seqno
            mems = [self._active] + list(reversed(self._immutables))
            segs = list(reversed(self._segments))
            for s in segs:
                s.pin()
        return Snapshot(self, bound, mems, segs)

    def get(self, key, snapshot: Snapshot | None = None) -> Record | None:
        if snapshot is not None:
            return snapshot.get(key)
        with self.snapshot() as snap:
            return snap.get(key)

    def scan(self, snapshot: Snapshot | None = None) -> Iterator[Record]:
        if snapshot is not None:
            yield from snapshot.scan()
            return
        with self.snapshot() as snap:
            yield from snap.scan()

    def read_block(self, handle: BlockHandle) -> bytes:
        return self.segment(handle.segment_id).read_block(handle)

    def __len__(self):
        return sum(1 for _ in self.scan())

    # -- flush ----------------------------------------------------------------

    def flush_memtable(self) -> Segment | None:
        """Flush the active buffer (and any queued ones) to new level-0 segments.

        Returns the newest segment produced, or ``None`` when nothing was buffered.
        """
        self._check_open()
        with self._write_lock:
            self._rotate_no_wait()
        return self._flush_pending()

    def _rotate_no_wait(self):
        old = self._active
        if old.entries == 0:
            return
        old.freeze()
        old.wal.sync()
        old.wal.close()
        self._wal_pending = 0
        new = self._new_memtable()
        with self._lock:
            self._immutables.append(old)
            self._active = new

    def _flush_pending(self) -> Segment | None:
        last = None
        with self._work_lock:
            while True:
                with self._lock:
                    if not self._immutables:
                        break
                    mem = self._immutables[0]
                last = self._flush_one(mem)
            if self.config.auto_compact:
                self.maybe_compact()
        return last

    def _flush_one(self, mem: Memtable) -> Segment | None:
        records = mem.latest_versions()
        seg = self._build_segment(records, level=0) if records else None
        with self._lock:
            if seg is not None:
                self._segments.append(seg)
                self.global_index.insert(seg)
            self._immutables.remove(mem)
            self._write_manifest()
            self._cond.notify_all()
        wal = self._wal_path(mem.wal_id)
        if os.path.exists(wal):
            os.unlink(wal)
        self.metrics.flushes += 1
        if seg is not None:
            self.metrics.bytes_flushed += seg.meta.file_size
            self.metrics.rows_flushed += seg.row_count
        return seg

    def _build_segment(self, records: list[Record], level: int) -> Segment:
        with self._lock:
            sid = self._next_id
            self._next_id += 1
        path = self._seg_path(sid)
        writer = SegmentWriter(path, sid)
        try:
            entries, handles = write_data_blocks(writer, self.codec, records)
            regions, summaries = build_segment_indexes(writer, self.schema, self.codec, records, handles,
                                                       seed=self.config.seed + sid)
            di = writer.add_block(encode_data_index(self.codec.keys, entries))
            size = writer.finish(regions, di, len(records), min(r.seqno for r in records),
                                 max(r.seqno for r in records), sync=self.config.fsync_segments)
        except OSError as exc:
            writer.abort()
            raise StorageError(f"segment build failed: {exc}") from exc
        except BaseException:
            writer.abort()
            raise
        meta = SegmentMeta(sid, level, path, len(records), min(r.seqno for r in records),
                           max(r.seqno for r in records), size, records[0].key, records[-1].key,
                           regions, di)
        seg = Segment(meta, self.schema, self.codec, self.cache, self.uid)
        seg.keys = frozenset(r.key for r in records)
        seg.index_summaries = summaries
        seg.stats = segment_stats(self.schema, records, len(entries), seed=sid)
        return seg

    # -- compaction -----------------------------------------------------------

    def compaction_candidates(self) -> list[list[Segment]]:
        """Age-contiguous runs of at least ``compaction_trigger`` same-level segments."""
        with self._lock:
            segs = list(self._segments)
        runs, cur = [], []
        for s in segs:
            if cur and s.level != cur[-1].level:
                if len(cur) >= self.config.compaction_trigger:
                    runs.append(cur)
                cur = []
            cur.append(s)
        if len(cur) >= self.config.compaction_trigger:
            runs.append(cur)
        return runs

    def maybe_compact(self) -> int:
        n = 0
        with self._work_lock:
            while True:
                runs = self.compaction_candidates()
                if not runs:
                    break
                self.compact_segments(runs[0])
                n += 1
        return n

    def compact_segments(self, inputs: Iterable[Segment]) -> Segment | None:
        """Merge ``inputs`` (widened to the age-contiguous span covering them) into one segment."""
        with self._work_lock:
            ids = {s.segment_id for s in inputs}
            with self._lock:
                pos = [i for i, s in enumerate(self._segments) if s.segment_id in ids]
                if len(pos) != len(ids):
                    raise StorageError("compaction input is not a live segment")
                if not pos:
                    return None
                a, b = min(pos), max(pos)
                run = self._segments[a : b + 1]
                includes_oldest = a == 0
            newest: dict = {}
            for s in reversed(run):
                for r in s.scan():
                    if r.key not in newest:
                        newest[r.key] = r
            records = [newest[k] for k in sorted(newest)]
            if includes_oldest:
                records = [r for r in records if not r.tombstone]
            level = max(s.level for s in run) + 1
            seg = self._build_segment(records, level) if records else None
            with self._lock:
                self._segments[a : b + 1] = [seg] if seg is not None else []
                for s in run:
                    self.global_index.remove(s.segment_id)
                if seg is not None:
                    self.global_index.insert(seg)
                self._write_manifest()
            for s in run:
                self.metrics.bytes_compacted += s.meta.file_size
                s.mark_obsolete()
            self.metrics.compactions += 1
            return seg

    # -- background worker ------------------------------------------------------

    def _run_worker(self):
        while True:
            with self._lock:
                while not self._immutables and not self._closed:
                    self._cond.wait(0.5)
                if self._closed and not self._immutables:
                    return
            try:
                self._flush_pending()
            except Exception as exc:  # keep serving reads; surface via metrics
                log.exception("background flush failed")
                self.metrics.background_errors.append(repr(exc))
                time.sleep(0.1)
                if self._closed:
                    return

    def wait_idle(self, timeout: float = 60.0) -> bool:
        """Block until no immutable memtable is waiting for a flush."""
        deadline = time.monotonic() + timeout
        with self._lock:
            while self._immutables:
                left = deadline - time.monotonic()
                if left <= 0:
                    return False
                self._cond.wait(min(left, 0.05))
        with self._work_lock:
            return True

    # -- manifest / recovery ----------------------------------------------------

    def _seg_path(self, sid: int) -> str:
        return os.path.join(self.path, f"seg-{sid:08d}.seg")

    def _wal_path(self, wid: int) -> str:
        return os.path.join(self.path, f"wal-{wid:08d}.log")

    def _write_manifest(self):
        obj = {
            "schema": self.schema.to_obj(),
            "next_id": self._next_id,
            "last_seqno": self._seqno,
            "segments": [{"id": s.segment_id, "level": s.level} for s in self._segments],
        }
        tmp = os.path.join(self.path, MANIFEST + ".tmp")
        with open(tmp, "w") as f:
            json.dump(obj, f)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, os.path.join(self.path, MANIFEST))

    @staticmethod
    def read_schema(path: str) -> TableSchema:
        with open(os.path.join(path, MANIFEST)) as f:
            return TableSchema.from_obj(json.load(f)["schema"])

    def _recover(self):
        with open(os.path.join(self.path, MANIFEST)) as f:
            man = json.load(f)
        live = {e["id"]: e["level"] for e in man["segments"]}
        files = os.listdir(self.path)
        max_id = man.get("next_id", 1) - 1
        wal_ids = []
        for name in files:
            full = os.path.join(self.path, name)
            if name.endswith(".tmp"):
                os.unlink(full)
                continue
            m = _SEG_RE.match(name)
            if m:
                sid = int(m.group(1))
                max_id = max(max_id, sid)
                if sid not in live:
                    os.unlink(full)  # orphan from an interrupted flush or compaction
                continue
            m = _WAL_RE.match(name)
            if m:
                wal_ids.append(int(m.group(1)))
                max_id = max(max_id, int(m.group(1)))
        self._next_id = max_id + 1
        for e in man["segments"]:
            self._segments.append(self._open_segment(e["id"], e["level"]))
        for s in self._segments:
            self.global_index.insert(s)
        max_seg_seqno = max((s.meta.max_seqno for s in self._segments), default=0)
        self._seqno = max(man.get("last_seqno", 0), max_seg_seqno)
        for wid in sorted(wal_ids):
            path = self._wal_path(wid)
            recs = [r for r in replay(path, self.codec) if r.seqno > max_seg_seqno]
            if not recs:
                os.unlink(path)
                continue
            mem = Memtable(wal_id=wid)
            for r in recs:
                mem.add(r, len(self.codec.encode_entry(r)))
                self._seqno = max(self._seqno, r.seqno)
            mem.freeze()
            self._immutables.append(mem)
        if not self.config.background:
            self._flush_pending()

    def _open_segment(self, sid: int, level: int) -> Segment:
        path = self._seg_path(sid)
        size = os.path.getsize(path)
        fd = os.open(path, os.O_RDONLY)
        try:
            foot = read_footer(fd, size, sid, self.codec.keys)
        finally:
            os.close(fd)
        meta = SegmentMeta(sid, level, path, foot["row_count"], foot["min_seqno"], foot["max_seqno"], size,
                           index_regions=foot["index_regions"], data_index=foot["data_index"])
        seg = Segment(meta, self.schema, self.codec, self.cache, self.uid)
        records = list(seg.scan())
        idx = seg.data_index()
        if idx:
            meta.min_key, meta.max_key = idx[0].first_key, idx[-1].last_key
        seg.keys = frozenset(r.key for r in records)
        seg.index_summaries = load_segment_summaries(seg, self.schema)
        seg.stats = segment_stats(self.schema, records, len(idx), seed=sid)
        return seg

    # -- lifecycle --------------------------------------------------------------

    def _check_open(self):
        if self._closed:
            raise StorageError(f"table {self.name} is closed")

    def close(self, flush: bool = False):
        if self._closed:
            return
        if flush:
            self.flush_memtable()
        with self._write_lock:
            self._active.wal.sync()
            self._active.wal.close()
        with self._lock:
            self._closed = True
            self._cond.notify_all()
        if self._worker is not None:
            self._worker.join()
        with self._lock:
            for s in self._segments:
                s.close()
        empty = self._active.entries == 0
        if empty and os.path.exists(self._wal_path(self._active.wal_id)):
            os.unlink(self._wal_path(self._active.wal_id))

