"""Materialized views and the coverage-region index that routes deltas to them."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial import cKDTree

from mmdb.index.ivf import l2_distances
from mmdb.query.nra import _key_order
from mmdb.query.spec import QuerySpec, RankSpec, RankTerm, SpatialContains
from mmdb.types import Point, Rect

FRESH = "FRESH"
STALE_REFILL = "STALE_REFILL"


@dataclass(eq=False)
class MaterializedView:
    """A stored query result kept current by delta maintenance.

    ``spatial_range`` views hold every base-filtered row inside ``region``;
    ``vector_nn`` views hold the ``capacity`` rows closest to ``center``
    among base-filtered rows, ascending by ``(distance, key)``.
    """

    view_id: int
    flavor: str  # spatial_range | vector_nn
    table: str
    column: str
    base_filters: tuple = ()
    region: Rect | None = None
    center: np.ndarray | None = None
    radius: float = 0.0  # vector_nn query-admission radius
    capacity: int = 0  # xk
    benefit: float = 0.0
    members: tuple = ()  # ids of the registered queries that produced this view
    watermark: int = 0
    state: str = FRESH
    hit_count: int = 0
    storage_bytes: int = 0
    rows: dict = field(default_factory=dict)  # key -> Record
    _sizes: dict = field(default_factory=dict)
    _pool: list = field(default_factory=list)  # vector_nn: sorted [(dist, key order, key)]
    _arrays: Any = None

    # -- definition -------------------------------------------------------------

    def definition(self) -> QuerySpec:
        if self.flavor == "spatial_range":
            return QuerySpec(self.table, self.base_filters + (SpatialContains(self.column, self.region),))
        rank = RankSpec((RankTerm("vector", self.column, self.center, 1.0),), self.capacity)
        return QuerySpec(self.table, self.base_filters, rank)

    def _passes(self, attrs: dict) -> bool:
        return all(p.matches(attrs) for p in self.base_filters)

    def distance(self, attrs: dict) -> float:
        v = attrs.get(self.column)
        if v is None:
            return math.inf
        return float(l2_distances(np.asarray(v)[None, :], self.center)[0])

    @property
    def maintenance_radius(self) -> float:
        """Vector rows farther than this from the center cannot enter the pool."""
        if self.flavor != "vector_nn" or len(self._pool) < self.capacity:
            return math.inf
        return self._pool[-1][0]

    # -- contents ---------------------------------------------------------------------

    def load(self, records, sizes, watermark: int):
        """Replace the contents with ``records`` (already the exact answer at ``watermark``)."""
        self.rows = {}
        self._sizes = {}
        self._pool = []
        self.storage_bytes = 0
        for r, sz in zip(records, sizes):
            self._put(r, sz)
        self._arrays = None
        self.watermark = watermark
        self.state = FRESH

    def _put(self, r, size: int):
        self.rows[r.key] = r
        self._sizes[r.key] = size
        self.storage_bytes += size
        if self.flavor == "vector_nn":
            bisect.insort(self._pool, (self.distance(r.attrs), _key_order(r.key), r.key))
        self._arrays = None

    def _drop(self, key):
        r = self.rows.pop(key)
        self.storage_bytes -= self._sizes.pop(key)
        if self.flavor == "vector_nn":
            item = (self.distance(r.attrs), _key_order(key), key)
            i = bisect.bisect_left(self._pool, item)
            del self._pool[i]
        self._arrays = None
        return r

    def apply(self, record, size: int) -> bool:
        """Fold one write (put or tombstone) into the view; returns whether the view changed.

        A vector pool that loses a member while full cannot know its
        replacement, so the view is flagged ``STALE_REFILL`` instead.
        """
        changed = False
        qualifies = (not record.tombstone) and self._passes(record.attrs)
        if self.flavor == "spatial_range":
            if record.key in self.rows:
                self._drop(record.key)
                changed = True
            g = record.attrs.get(self.column) if qualifies else None
            if isinstance(g, Point) and self.region.contains_point(g.x, g.y):
                self._put(record, size)
                changed = True
            return changed
        if qualifies and record.attrs.get(self.column) is None:
            qualifies = False
        item = (self.distance(record.attrs), _key_order(record.key), record.key) if qualifies else None
        if record.key in self.rows:
            full = len(self._pool) >= self.capacity
            old_max = self._pool[-1]
            self._drop(record.key)
            changed = True
            if full and (item is None or item > old_max):
                # the member left (or moved past the boundary): an unseen row may belong now
                self.state = STALE_REFILL
                return True
        if item is None:
            return changed
        if len(self._pool) < self.capacity:
            self._put(record, size)
            return True
        if item < self._pool[-1]:
            self._drop(self._pool[-1][2])
            self._put(record, size)
            return True
        return changed

    def records(self) -> list:
        """Rows in view order: by key for spatial views, by distance for vector views."""
        if self.flavor == "vector_nn":
            return [self.rows[k] for _, _, k in self._pool]
        return [self.rows[k] for k in sorted(self.rows, key=_key_order)]

    def arrays(self):
        """``(records, xs, ys)`` of a spatial view, cached between changes."""
        if self._arrays is None:
            recs = self.records()
            xs = np.array([r.attrs[self.column].x for r in recs], dtype=np.float64)
            ys = np.array([r.attrs[self.column].y for r in recs], dtype=np.float64)
            self._arrays = (recs, xs, ys)
        return self._arrays

    def describe(self) -> dict:
        return {"id": self.view_id, "flavor": self.flavor, "table": self.table, "column": self.column,
                "bytes": self.storage_bytes, "rows": len(self.rows), "watermark": self.watermark,
                "hits": self.hit_count, "state": self.state}


class ViewCatalog:
    """Live views plus kd-trees over their coverage regions."""

    def __init__(self, budget_bytes: int):
        self.budget = int(budget_bytes)
        self.views: dict[int, MaterializedView] = {}
        self._dirty = True
        self._spatial: dict = {}
        self._vector: dict = {}

    @property
    def total_bytes(self) -> int:
        return sum(v.storage_bytes for v in self.views.values())

    def add(self, view: MaterializedView):
        self.views[view.view_id] = view
        self._dirty = True

    def remove(self, view_id: int):
        self.views.pop(view_id, None)
        self._dirty = True

    def get(self, view_id: int) -> MaterializedView | None:
        return self.views.get(view_id)

    def for_table(self, table: str) -> list[MaterializedView]:
        return [v for v in self.views.values() if v.table == table]

    def invalidate(self):
        self._dirty = True

    def _rebuild(self):
        self._spatial, self._vector = {}, {}
        groups: dict = {}
        for v in self.views.values():
            groups.setdefault((v.table, v.flavor, v.column), []).append(v)
        for (table, flavor, col), vs in groups.items():
            if flavor == "spatial_range":
                c = np.array([[(v.region.xmin + v.region.xmax) / 2, (v.region.ymin + v.region.ymax) / 2] for v in vs])
                half = max(max(v.region.xmax - v.region.xmin, v.region.ymax - v.region.ymin) / 2 for v in vs)
                self._spatial[(table, col)] = (cKDTree(c), vs, half)
            else:
                bounded = [v for v in vs if math.isfinite(v.maintenance_radius)]
                always = [v for v in vs if not math.isfinite(v.maintenance_radius)]
                tree = None
                reach = 0.0
                if bounded:
                    tree = cKDTree(np.stack([np.asarray(v.center, dtype=np.float64) for v in bounded]))
                    reach = max(v.maintenance_radius for v in bounded)
                self._vector[(table, col)] = (tree, bounded, reach, always)
        self._dirty = False

    def probe(self, table: str, record) -> list[MaterializedView]:
        """Every view of ``table`` whose coverage region contains the record's point or embedding.

        Vector pools shrink their reach as they fill, so the tree radius taken
        at build time is an over-approximation refined by an exact check.
        """
        if self._dirty:
            self._rebuild()
        out = []
        for (t, col), (tree, vs, half) in self._spatial.items():
            g = record.attrs.get(col)
            if t != table or not isinstance(g, Point):
                continue
            for i in tree.query_ball_point([g.x, g.y], half + 1e-9, p=math.inf):
                if vs[i].region.contains_point(g.x, g.y):
                    out.append(vs[i])
        for (t, col), (tree, bounded, reach, always) in self._vector.items():
            v = record.attrs.get(col)
            if t != table or v is None:
                continue
            out.extend(always)
            if tree is not None:
                for i in tree.query_ball_point(np.asarray(v, dtype=np.float64), reach * (1 + 1e-9) + 1e-9):
                    view = bounded[i]
                    if view.distance(record.attrs) <= view.maintenance_radius:
                        out.append(view)
        return out

    def holding(self, table: str, key) -> list[MaterializedView]:
        """Views currently materializing some version of ``key``."""
        return [v for v in self.views.values() if v.table == table and key in v.rows]
