"""Per-segment column statistics used for selectivity estimation.

Stats are computed from the rows written into a segment (at flush, at
compaction, and again by scanning when a table is reopened).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from mmdb.index.text import tokenize
from mmdb.types import Point, Rect, TableSchema

N_BINS = 64
RESERVOIR_SIZE = 1024


@dataclass
class Histogram:
    """Equi-width histogram over numeric values; ``sum(counts) == n``."""

    lo: float
    hi: float
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    integer: bool = False

    @classmethod
    def build(cls, values, n_bins: int = N_BINS, integer: bool = False) -> "Histogram":
        """Integer histograms cover ``[min - 0.5, max + 0.5]`` so each value owns a unit interval."""
        v = np.asarray(values, dtype=np.float64)
        if len(v) == 0:
            return cls(0.0, 0.0, np.zeros(n_bins, dtype=np.int64), integer)
        lo, hi = float(v.min()), float(v.max())
        if integer:
            lo, hi = lo - 0.5, hi + 0.5
        if hi == lo:
            counts = np.zeros(n_bins, dtype=np.int64)
            counts[0] = len(v)
            return cls(lo, hi, counts, integer)
        counts, _ = np.histogram(v, bins=n_bins, range=(lo, hi))
        return cls(lo, hi, counts.astype(np.int64), integer)

    def estimate_count(self, lo: float, hi: float) -> float:
        """Rows in ``[lo, hi]``, interpolating linearly within partial bins."""
        n = self.n
        if self.integer:
            lo, hi = math.ceil(lo) - 0.5, math.floor(hi) + 0.5
        if n == 0 or hi < lo or hi < self.lo or lo > self.hi:
            return 0.0
        if self.hi == self.lo:
            return float(n)
        edges = np.linspace(self.lo, self.hi, len(self.counts) + 1)
        ov = np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0.0, None)
        frac = ov / (edges[1:] - edges[:-1])
        return float(min(n, (self.counts * frac).sum()))


@dataclass
class ScalarStats:
    count: int
    hist: Histogram | None
    min: object = None
    max: object = None
    distinct: Counter | None = None  # string columns: value counts


@dataclass
class SpatialStats:
    count: int
    mbr: Rect | None


@dataclass
class TextStats:
    n_docs: int
    df: Counter = field(default_factory=Counter)


@dataclass
class VectorStats:
    count: int
    reservoir: np.ndarray  # (m, dim) float32 sample


@dataclass
class SegmentStats:
    row_count: int
    data_blocks: int
    columns: dict


def _reservoir(rows: list, size: int, seed: int) -> list:
    if len(rows) <= size:
        return list(rows)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(rows), size=size, replace=False))
    return [rows[i] for i in idx]


def column_stats(kind: str, index_kind: str | None, values: list, seed: int = 0):
    vals = [v for v in values if v is not None]
    if index_kind == "ivf" or kind == "vector":
        sample = _reservoir(vals, RESERVOIR_SIZE, seed)
        res = np.stack(sample).astype(np.float32) if sample else np.zeros((0, 0), np.float32)
        return VectorStats(len(vals), res)
    if kind == "geometry":
        pts = [v for v in vals if isinstance(v, Point)]
        if not pts:
            return SpatialStats(0, None)
        xs = np.array([p.x for p in pts])
        ys = np.array([p.y for p in pts])
        return SpatialStats(len(pts), Rect(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())))
    if kind == "text":
        df: Counter = Counter()
        for v in vals:
            df.update(set(tokenize(v)))
        return TextStats(len(vals), df)
    if kind == "string":
        c = Counter(vals)
        return ScalarStats(len(vals), None, min(vals) if vals else None, max(vals) if vals else None, c)
    if kind in ("int64", "float64", "timestamp"):
        return ScalarStats(len(vals), Histogram.build(vals, integer=kind != "float64"), min(vals) if vals else None,
                           max(vals) if vals else None)
    return None


def segment_stats(schema: TableSchema, records: list, data_blocks: int, seed: int = 0) -> SegmentStats:
    live = [r for r in records if not r.tombstone]
    cols = {}
    for spec in schema.index_specs:
        col = schema.column(spec.column)
        cols[spec.column] = column_stats(col.kind, spec.kind, [r.attrs.get(spec.column) for r in live], seed)
    return SegmentStats(len(live), data_blocks, cols)


def rect_overlap_fraction(mbr: Rect | None, query: Rect) -> float:
    """Uniformity estimate: share of ``mbr`` covered by ``query``."""
    if mbr is None:
        return 0.0
    inter = mbr.intersection(query)
    if inter is None:
        return 0.0
    area = mbr.area
    if area <= 0.0:
        return 1.0
    return max(0.0, min(1.0, inter.area / area))


def log_fanout_blocks(n_entries: float, per_block: float) -> float:
    return max(1.0, math.ceil(n_entries / max(1.0, per_block)))
