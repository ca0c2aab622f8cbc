"""Source-aware read access over one table snapshot.

Rows live in the in-memory buffers (one logical source) or in segments.  A
segment row is live only if no newer source holds a version of its key.  Text
relevance uses the statistics of the source a row lives in, so every access
path here computes it identically.
"""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from mmdb.index.base import MEMTABLE_SOURCE
from mmdb.index.ivf import l2_distances
from mmdb.index.text import idf, score_to_distance, tokenize
from mmdb.stats import TextStats
from mmdb.storage.table import Snapshot, Table
from mmdb.types import Point


class SnapshotReader:
    def __init__(self, table: Table, snapshot: Snapshot):
        self.table = table
        self.schema = table.schema
        self.snapshot = snapshot
        rows = snapshot.memtable_rows()
        self.mem_keys = frozenset(r.key for r in rows)
        self.mem_live = [r for r in rows if not r.tombstone]
        self.segments = list(snapshot.segments)  # newest first
        self._mem_text: dict = {}

    @property
    def io(self):
        return self.table.cache.stats

    def shadowed(self, seg_index: int, key) -> bool:
        if key in self.mem_keys:
            return True
        for s in self.segments[:seg_index]:
            if key in s.keys:
                return True
        return False

    def live_rows(self):
        """``(source id, record)`` for every live row (memtable first, then newest segments)."""
        for r in self.mem_live:
            yield MEMTABLE_SOURCE, r
        for i, seg in enumerate(self.segments):
            for r in seg.scan():
                if r.tombstone or self.shadowed(i, r.key):
                    continue
                yield seg.segment_id, r

    def lookup(self, key):
        """``(source id, record)`` of the live version of ``key``, or ``None``."""
        for m in self.snapshot.memtables:
            r = m.lookup(key, self.snapshot.seqno_bound)
            if r is not None:
                return None if r.tombstone else (MEMTABLE_SOURCE, r)
        for s in self.segments:
            if key in s.keys:
                r = s.get(key)
                if r is not None:
                    return None if r.tombstone else (s.segment_id, r)
        return None

    def row_count(self) -> int:
        return sum(s.stats.row_count for s in self.segments) + len(self.mem_live)

    # -- ranking distances ------------------------------------------------------

    def text_stats(self, source: int, column: str) -> TextStats:
        if source == MEMTABLE_SOURCE:
            st = self._mem_text.get(column)
            if st is None:
                vals = [r.attrs.get(column) for r in self.mem_live]
                st = _text_stats(vals)
                self._mem_text[column] = st
            return st
        seg = self._segment(source)
        st = seg.stats.columns.get(column) if seg.stats else None
        if isinstance(st, TextStats):
            return st
        cache = seg.__dict__.setdefault("_text_stats", {})
        if column not in cache:
            cache[column] = _text_stats([r.attrs.get(column) for r in seg.scan() if not r.tombstone])
        return cache[column]

    def _segment(self, sid: int):
        for s in self.segments:
            if s.segment_id == sid:
                return s
        raise KeyError(sid)

    def term_distance(self, term, record, source: int) -> float:
        v = record.attrs.get(term.column)
        if term.modality == "vector":
            if v is None:
                return math.inf
            return float(l2_distances(np.asarray(v)[None, :], term.query)[0])
        if term.modality == "spatial":
            if not isinstance(v, Point):
                return math.inf
            return float(np.hypot(v.x - term.query.x, v.y - term.query.y))
        return text_distance(self.text_stats(source, term.column), v, term.query)

    def term_distances(self, term, records, source: int) -> np.ndarray:
        """:meth:`term_distance` over many records of one source."""
        out = np.full(len(records), math.inf)
        if term.modality == "vector":
            idx = [i for i, r in enumerate(records) if r.attrs.get(term.column) is not None]
            if idx:
                out[idx] = l2_distances(np.stack([records[i].attrs[term.column] for i in idx]), term.query)
        elif term.modality == "spatial":
            pts = [(i, g) for i, r in enumerate(records) if isinstance(g := r.attrs.get(term.column), Point)]
            if pts:
                xs = np.array([g.x for _, g in pts])
                ys = np.array([g.y for _, g in pts])
                out[[i for i, _ in pts]] = np.hypot(xs - term.query.x, ys - term.query.y)
        else:
            st = self.text_stats(source, term.column)
            for i, r in enumerate(records):
                out[i] = text_distance(st, r.attrs.get(term.column), term.query)
        return out

    def appears_many(self, term, records) -> np.ndarray:
        if term.modality == "vector":
            return np.array([r.attrs.get(term.column) is not None for r in records], dtype=bool)
        if term.modality == "spatial":
            return np.array([isinstance(r.attrs.get(term.column), Point) for r in records], dtype=bool)
        q = set(term.query)
        return np.array([bool(q.intersection(tokenize(r.attrs.get(term.column)))) for r in records], dtype=bool)

    def distances_many(self, rank, rows) -> list:
        """``(source, record, distances)`` for the eligible rows among ``(source, record)`` pairs."""
        by_src: dict = {}
        for src, r in rows:
            by_src.setdefault(src, []).append(r)
        out = []
        for src, recs in by_src.items():
            elig = np.zeros(len(recs), dtype=bool)
            for t in rank.terms:
                if t.weight > 0:
                    elig |= self.appears_many(t, recs)
            recs = [r for r, e in zip(recs, elig) if e]
            if not recs:
                continue
            cols = [self.term_distances(t, recs, src) for t in rank.terms]
            for i, r in enumerate(recs):
                out.append((src, r, [float(c[i]) for c in cols]))
        return out

    def appears(self, term, record) -> bool:
        """Whether the row would be yielded by this term's sorted source."""
        v = record.attrs.get(term.column)
        if term.modality == "vector":
            return v is not None
        if term.modality == "spatial":
            return isinstance(v, Point)
        return v is not None and bool(set(tokenize(v)) & set(term.query))

    def distances(self, rank, record, source: int):
        """Per-term distances, or ``None`` when the row appears under no weighted term."""
        if not any(t.weight > 0 and self.appears(t, record) for t in rank.terms):
            return None
        return [self.term_distance(t, record, source) for t in rank.terms]


def _text_stats(values) -> TextStats:
    df: Counter = Counter()
    n = 0
    for v in values:
        if v is None:
            continue
        n += 1
        df.update(set(tokenize(v)))
    return TextStats(n, df)


def text_distance(stats: TextStats, text, terms) -> float:
    if text is None:
        return 1.0
    tf = Counter(tokenize(text))
    score = 0.0
    for t in terms:
        c = tf.get(t, 0)
        if c:
            score += c * idf(stats.n_docs, stats.df[t])
    return score_to_distance(score)


def weighted_score(weights, dists) -> float:
    """Same arithmetic as the top-k aggregator, so scores agree across plans."""
    from mmdb.query.nra import _weighted

    return _weighted(np.asarray(dists, dtype=np.float64), np.asarray(weights, dtype=np.float64))
