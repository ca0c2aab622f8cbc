"""Block handles, the shared LRU block cache and physical I/O counters."""

from __future__ import annotations

import threading
from collections import Counter, OrderedDict
from typing import Any, Callable, NamedTuple


class BlockHandle(NamedTuple):
    segment_id: int
    offset: int
    length: int


class IOStats:
    """Monotone counters of physical block reads, for observability and tests."""

    def __init__(self):
        self._lock = threading.Lock()
        self.physical_reads = 0
        self.bytes_read = 0
        self.cache_hits = 0
        self.reads_by_segment: Counter = Counter()

    def record_read(self, segment_key, nbytes: int):
        with self._lock:
            self.physical_reads += 1
            self.bytes_read += nbytes
            self.reads_by_segment[segment_key] += 1

    def record_hit(self):
        with self._lock:
            self.cache_hits += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "physical_reads": self.physical_reads,
                "bytes_read": self.bytes_read,
                "cache_hits": self.cache_hits,
                "reads_by_segment": Counter(self.reads_by_segment),
            }


class _Entry:
    __slots__ = ("data", "decoded", "charge")

    def __init__(self, data: bytes):
        self.data = data
        self.decoded: dict = {}
        self.charge = len(data)


class BlockCache:
    """Byte-capacity LRU over verified block payloads.

    Entries also memoize decoded forms of the payload (keyed by decoder name),
    which is safe because blocks are immutable once written.
    """

    def __init__(self, capacity_bytes: int = 512 * 1024 * 1024, stats: IOStats | None = None):
        self.capacity = int(capacity_bytes)
        self.stats = stats or IOStats()
        self._lock = threading.Lock()
        self._entries: OrderedDict[Any, _Entry] = OrderedDict()
        self._used = 0

    @property
    def used_bytes(self) -> int:
        return self._used

    def __len__(self):
        return len(self._entries)

    def _lookup(self, key) -> _Entry | None:
        with self._lock:
            e = self._entries.get(key)
            if e is not None:
                self._entries.move_to_end(key)
            return e

    def _admit(self, key, entry: _Entry):
        if entry.charge > self.capacity:
            return
        with self._lock:
            old = self._entries.pop(key, None)
            if old is not None:
                self._used -= old.charge
            self._entries[key] = entry
            self._used += entry.charge
            while self._used > self.capacity and self._entries:
                _, ev = self._entries.popitem(last=False)
                self._used -= ev.charge

    def get_or_load(self, key, segment_key, loader: Callable[[], bytes]) -> _Entry:
        e = self._lookup(key)
        if e is not None:
            self.stats.record_hit()
            return e
        data = loader()
        self.stats.record_read(segment_key, len(data) + 4)
        e = _Entry(data)
        self._admit(key, e)
        return e

    def evict_prefix(self, segment_key):
        """Drop all entries belonging to ``segment_key`` (segment unlinked)."""
        with self._lock:
            doomed = [k for k in self._entries if k[0] == segment_key]
            for k in doomed:
                self._used -= self._entries.pop(k).charge

    def clear(self):
        with self._lock:
            self._entries.clear()
            self._used = 0
