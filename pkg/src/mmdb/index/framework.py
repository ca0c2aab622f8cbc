"""Two-level secondary indexing: per-segment index builds and the in-memory global index."""

from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass
from typing import Any

import numpy as np

from mmdb.errors import UnindexedColumnError
from mmdb.index import btree, ivf, spatial, text
from mmdb.storage.blocks import BlockHandle
from mmdb.types import Rect, TableSchema

KIND_TAGS = {"btree": btree.TAG, "ivf": ivf.TAG, "spatial": spatial.TAG, "inverted": text.TAG}


def build_segment_indexes(writer, schema: TableSchema, codec, records: list, handles: list,
                          seed: int = 0) -> tuple[dict, dict]:
    """Write one index region per IndexSpec for key-sorted ``records``.

    Tombstones are not indexed.  Returns ``(index_regions, summaries)`` mapping
    column name to root handle and to the in-memory summary.
    """
    live = [(r, h) for r, h in zip(records, handles) if not r.tombstone]
    keys = [r.key for r, _ in live]
    hs = [h for _, h in live]
    regions: dict = {}
    summaries: dict = {}
    for spec in schema.index_specs:
        col = schema.column(spec.column)
        values = [r.attrs.get(spec.column) for r, _ in live]
        if spec.kind == "btree":
            root, summ = btree.build(writer, col.kind, codec.keys, keys, values, hs)
        elif spec.kind == "ivf":
            root, summ = ivf.build(writer, spec, col.dim, codec.keys, keys, values, hs, seed=seed)
        elif spec.kind == "spatial":
            root, summ = spatial.build(writer, codec.keys, keys, values, hs)
        elif spec.kind == "inverted":
            root, summ = text.build(writer, codec.keys, keys, values, hs)
        else:  # pragma: no cover - rejected by schema validation
            raise ValueError(spec.kind)
        regions[spec.column] = root
        summaries[spec.column] = summ
    return regions, summaries


_LOADERS = {"btree": btree.load_summary, "ivf": ivf.load_summary,
            "spatial": spatial.load_summary, "inverted": text.load_summary}


def load_segment_summaries(segment, schema: TableSchema) -> dict:
    """Rebuild per-segment summaries from the index roots named in the footer."""
    out = {}
    for spec in schema.index_specs:
        root = segment.index_regions.get(spec.column)
        if root is not None:
            out[spec.column] = _LOADERS[spec.kind](segment, root)
    return out


@dataclass(frozen=True)
class GlobalEntry:
    segment_id: int
    root: BlockHandle
    summary: Any


class _ScalarTree:
    """Entries ordered by summary minimum; lookups bisect on it then check maxima."""

    def __init__(self):
        self.mins: list = []
        self.entries: list[GlobalEntry] = []

    def insert(self, e: GlobalEntry):
        if e.summary.count == 0:
            self.entries.append(e)
            self.mins.append(None)
            self._resort()
            return
        self.entries.append(e)
        self.mins.append(e.summary.min)
        self._resort()

    def _resort(self):
        pairs = sorted(zip(self.mins, self.entries),
                       key=lambda p: (p[0] is not None, p[0] if p[0] is not None else 0, p[1].segment_id))
        self.mins = [p[0] for p in pairs]
        self.entries = [p[1] for p in pairs]

    def remove(self, segment_id: int):
        keep = [(m, e) for m, e in zip(self.mins, self.entries) if e.segment_id != segment_id]
        self.mins = [m for m, _ in keep]
        self.entries = [e for _, e in keep]

    def lookup(self, lo, hi) -> list[GlobalEntry]:
        start = next((i for i, m in enumerate(self.mins) if m is not None), len(self.mins))
        valued = self.mins[start:]
        end = start + bisect.bisect_right(valued, hi) if hi is not None else len(self.mins)
        return [e for e in self.entries[start:end] if lo is None or not e.summary.max < lo]

    def all(self):
        return list(self.entries)


class GlobalIndex:
    """In-RAM map from per-segment index summaries to segments, for pruning.

    A pure cache: it can always be rebuilt from the segment footers.
    """

    def __init__(self, schema: TableSchema):
        self.schema = schema
        self._lock = threading.Lock()
        self._kinds = {s.column: s.kind for s in schema.index_specs}
        self._cols: dict = {c: (_ScalarTree() if k == "btree" else {}) for c, k in self._kinds.items()}

    def insert(self, segment):
        with self._lock:
            for col, kind in self._kinds.items():
                root = segment.index_regions.get(col)
                if root is None:
                    continue
                e = GlobalEntry(segment.segment_id, root, segment.index_summaries[col])
                if kind == "btree":
                    self._cols[col].insert(e)
                else:
                    self._cols[col][segment.segment_id] = e

    def remove(self, segment_id: int):
        with self._lock:
            for col, kind in self._kinds.items():
                if kind == "btree":
                    self._cols[col].remove(segment_id)
                else:
                    self._cols[col].pop(segment_id, None)

    def segment_ids(self, column: str) -> set:
        return {e.segment_id for e in self._entries(column)}

    def _entries(self, column: str) -> list[GlobalEntry]:
        if column not in self._kinds:
            raise UnindexedColumnError(f"column {column!r} has no index")
        with self._lock:
            c = self._cols[column]
            return c.all() if isinstance(c, _ScalarTree) else list(c.values())

    def prune(self, column: str, query) -> list[GlobalEntry]:
        """Segments whose summary may match ``query``; no false negatives.

        ``query`` is ``(lo, hi)`` for btree, a Rect/Polygon for spatial, a term
        (or list of terms, any of which may match) for inverted, and a query
        vector (optionally ``(vector, radius)``) for ivf.
        """
        kind = self._kinds.get(column)
        if kind is None:
            raise UnindexedColumnError(f"column {column!r} has no index")
        if kind == "btree":
            lo, hi = query
            with self._lock:
                return self._cols[column].lookup(lo, hi)
        entries = self._entries(column)
        if kind == "spatial":
            bbox = query.bbox()
            return [e for e in entries if e.summary.overlaps(bbox)]
        if kind == "inverted":
            terms = [query] if isinstance(query, str) else list(query)
            return [e for e in entries if any(e.summary.may_contain(t) for t in terms)]
        if isinstance(query, tuple):
            q, radius = query
        else:
            q, radius = query, math.inf
        q = np.asarray(q, dtype=np.float32)
        return [e for e in entries if e.summary.count > 0 and e.summary.lower_bound(q) <= radius]

    def prune_segments(self, column: str, query) -> set:
        return {(e.segment_id, e.root) for e in self.prune(column, query)}
