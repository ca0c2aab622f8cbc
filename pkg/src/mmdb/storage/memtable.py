"""In-memory write buffer: an ordered, multi-version map keyed by primary key."""

from __future__ import annotations

import threading

from mmdb.types import Record


class Memtable:
    """Holds every version written since the last swap.

    Versions are kept per key (ascending seqno) so snapshots taken before a
    later overwrite still see the older value.
    """

    def __init__(self, wal_id: int | None = None):
        self.wal_id = wal_id
        self._versions: dict = {}
        self._sorted_keys: list | None = []
        self.size_bytes = 0
        self.entries = 0
        self.min_seqno: int | None = None
        self.max_seqno = 0
        self.frozen = False
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._versions)

    def add(self, record: Record, nbytes: int):
        assert not self.frozen, "write to frozen memtable"
        with self._lock:
            vs = self._versions.get(record.key)
            if vs is None:
                self._versions[record.key] = [record]
                self._sorted_keys = None
            else:
                vs.append(record)
            self.size_bytes += nbytes
            self.entries += 1
            if self.min_seqno is None:
                self.min_seqno = record.seqno
            self.max_seqno = record.seqno

    def freeze(self):
        self.frozen = True

    def lookup(self, key, bound: int | None = None) -> Record | None:
        """Newest version of ``key`` with seqno <= ``bound`` (tombstones included)."""
        vs = self._versions.get(key)
        if not vs:
            return None
        if bound is None or vs[-1].seqno <= bound:
            return vs[-1]
        for r in reversed(vs):
            if r.seqno <= bound:
                return r
        return None

    def contains(self, key, bound: int | None = None) -> bool:
        return self.lookup(key, bound) is not None

    def sorted_keys(self) -> list:
        with self._lock:
            if self._sorted_keys is None:
                self._sorted_keys = sorted(self._versions)
            return self._sorted_keys

    def visible(self, bound: int | None = None):
        """Newest version per key in key order, tombstones included."""
        for k in self.sorted_keys():
            r = self.lookup(k, bound)
            if r is not None:
                yield r

    def latest_versions(self) -> list[Record]:
        """Newest version of every key, sorted by key (used when flushing)."""
        return [self._versions[k][-1] for k in self.sorted_keys()]
