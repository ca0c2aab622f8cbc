"""Selectivity estimation, plan enumeration and the cost model.

Cost of a filter plan::

    sum_legs blocks_index(leg) * C_BLK + candidates * (C_KEY + residuals * C_RES)

where ``candidates = N * prod(selectivity of served predicates)``.  A full
scan costs ``N * (C_KEY + filters * C_RES) + data_blocks * C_BLK``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from mmdb.index import btree, ivf, spatial
from mmdb.index.ivf import l2_distances
from mmdb.query.spec import Keyword, Predicate, QuerySpec, RankSpec, ScalarRange, SpatialContains, VectorThreshold
from mmdb.stats import ScalarStats, SpatialStats, TextStats, VectorStats, rect_overlap_fraction
from mmdb.types import Polygon

C_BLK = 1.0
C_KEY = 0.02
C_RES = 0.005
FALLBACK_SELECTIVITY = 0.1
MAX_INTERSECT_LEGS = 4
NRA_DEPTH_FACTOR = 4.0  # expected entries drawn per source, in multiples of k

_BTREE_PER_LEAF = btree.LEAF_TARGET_BYTES // 32
_SPATIAL_PER_LEAF = spatial.LEAF_TARGET_BYTES // 46


# -- selectivity ---------------------------------------------------------------


def estimate_segment_count(pred: Predicate, seg_stats) -> float:
    """Estimated matching rows of one segment, from its column statistics."""
    n = seg_stats.row_count
    st = seg_stats.columns.get(pred.column)
    if st is None or n == 0:
        return FALLBACK_SELECTIVITY * n
    if isinstance(pred, ScalarRange) and isinstance(st, ScalarStats):
        if st.hist is not None:
            lo, hi = pred.bounds
            return st.hist.estimate_count(lo, hi)
        if st.distinct is not None:
            return float(sum(c for v, c in st.distinct.items() if pred.matches({pred.column: v})))
    if isinstance(pred, SpatialContains) and isinstance(st, SpatialStats):
        frac = rect_overlap_fraction(st.mbr, pred.region.bbox())
        if isinstance(pred.region, Polygon):
            bb = pred.region.bbox()
            if bb.area > 0:
                frac *= min(1.0, pred.region.area / bb.area)
        return st.count * frac
    if isinstance(pred, Keyword) and isinstance(st, TextStats):
        tok = pred.token
        if tok is None:
            return FALLBACK_SELECTIVITY * n
        return float(st.df.get(tok, 0))
    if isinstance(pred, VectorThreshold) and isinstance(st, VectorStats):
        if len(st.reservoir) == 0:
            return 0.0
        d = l2_distances(st.reservoir, pred.query)
        return st.count * float(np.mean(d < pred.threshold))
    return FALLBACK_SELECTIVITY * n


@dataclass
class TableStats:
    """Statistics over one snapshot: per-segment stats plus the in-memory rows."""

    segments: list  # Segment objects (stats, summaries)
    mem_rows: list  # live in-memory records
    _counts: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return sum(s.stats.row_count for s in self.segments) + len(self.mem_rows)

    @property
    def data_blocks(self) -> int:
        return sum(s.stats.data_blocks for s in self.segments)

    def estimate_count(self, pred: Predicate) -> float:
        """Estimated rows over segments plus the exact count among in-memory rows."""
        key = (type(pred), pred)
        if key not in self._counts:
            total = sum(estimate_segment_count(pred, s.stats) for s in self.segments)
            if self.mem_rows:
                total += int(pred.mask(self.mem_rows).sum())
            self._counts[key] = total
        return self._counts[key]


def estimate_selectivity(pred: Predicate, stats: TableStats) -> float:
    """Fraction of rows expected to satisfy ``pred`` (0.1 without statistics)."""
    n = stats.n
    if n == 0:
        return FALLBACK_SELECTIVITY
    return max(0.0, min(1.0, stats.estimate_count(pred) / n))


# -- plan nodes ------------------------------------------------------------------


@dataclass(eq=False)
class PlanNode:
    estimated_cost: float = 0.0
    estimated_rows: float = 0.0
    actual_rows: int | None = field(default=None, init=False)
    actual_block_reads: int | None = field(default=None, init=False)

    kind = "Plan"

    @property
    def label(self) -> str:
        return self.kind

    def children(self) -> list:
        return []

    def explain(self, indent: int = 0) -> str:
        pad = "  " * indent
        act = "" if self.actual_rows is None else f" actual_rows={self.actual_rows}"
        blk = "" if self.actual_block_reads is None else f" actual_block_reads={self.actual_block_reads}"
        line = f"{pad}{self.label} cost={self.estimated_cost:.3f} est_rows={self.estimated_rows:.1f}{act}{blk}"
        return "\n".join([line] + [c.explain(indent + 1) for c in self.children()])

    def __str__(self):
        return self.label


@dataclass(eq=False)
class FullScan(PlanNode):
    residuals: tuple = ()
    kind = "FullScan"


@dataclass(eq=False)
class IndexFilter(PlanNode):
    predicate: Predicate = None
    residuals: tuple = ()
    index_blocks: float = 0.0
    kind = "IndexFilter"

    @property
    def label(self) -> str:
        return f"IndexFilter[{self.predicate.column}:{self.predicate.kind}]"


@dataclass(eq=False)
class IndexIntersect(PlanNode):
    legs: tuple = ()
    residuals: tuple = ()
    kind = "IndexIntersect"

    @property
    def label(self) -> str:
        return "IndexIntersect[" + "+".join(f"{l.predicate.column}:{l.predicate.kind}" for l in self.legs) + "]"

    def children(self):
        return list(self.legs)


@dataclass(eq=False)
class NraTopK(PlanNode):
    rank: RankSpec = None
    prefilter: PlanNode | None = None
    kind = "NraTopK"

    @property
    def label(self) -> str:
        return "NraTopK" if self.prefilter is None else f"NraTopK(prefilter={self.prefilter.label})"

    def children(self):
        return [self.prefilter] if self.prefilter is not None else []


@dataclass(eq=False)
class TopKSort(PlanNode):
    rank: RankSpec = None
    child: PlanNode = None
    kind = "TopKSort"

    @property
    def label(self) -> str:
        return f"TopKSort({self.child.label})"

    def children(self):
        return [self.child]


# -- index block estimates ---------------------------------------------------------


def _summary_may_match(pred: Predicate, summary) -> bool:
    if isinstance(pred, ScalarRange):
        if summary.count == 0:
            return False
        lo, hi = pred.bounds
        try:
            return summary.overlaps(lo, hi)
        except TypeError:
            return True
    if isinstance(pred, SpatialContains):
        return summary.overlaps(pred.region.bbox())
    if isinstance(pred, Keyword):
        return summary.may_contain(pred.token)
    if isinstance(pred, VectorThreshold):
        return summary.count > 0 and summary.lower_bound(pred.query) <= pred.threshold
    return True


def segment_may_match(pred: Predicate, segment) -> bool:
    """Summary-level pruning test (no block reads); never a false negative."""
    summary = segment.index_summaries.get(pred.column)
    if summary is None:
        return True
    return _summary_may_match(pred, summary)


def leg_blocks(pred: Predicate, segments) -> float:
    """Expected index blocks read to answer ``pred`` over ``segments``."""
    total = 0.0
    for seg in segments:
        if not segment_may_match(pred, seg):
            continue
        est = estimate_segment_count(pred, seg.stats)
        if isinstance(pred, ScalarRange):
            total += 1 + math.ceil(est / _BTREE_PER_LEAF) + 1
        elif isinstance(pred, SpatialContains):
            total += 1 + math.ceil(est / _SPATIAL_PER_LEAF) + 1
        elif isinstance(pred, Keyword):
            total += 3
        elif isinstance(pred, VectorThreshold):
            summ = seg.index_summaries[pred.column]
            lbs = summ.cell_lower_bounds(pred.query)
            total += 1 + int(np.sum((lbs <= pred.threshold) & (summ.lengths > 0)))
    return total


# -- enumeration -----------------------------------------------------------------------


def servable_predicates(spec: QuerySpec, schema) -> list[Predicate]:
    out = []
    for p in spec.filters:
        idx = schema.index_for(p.column)
        if idx is not None and idx.kind == p.index_kind and p.servable:
            out.append(p)
    return out


def _filter_cost(legs: list[Predicate], filters: tuple, stats: TableStats) -> tuple[float, float, list]:
    n = stats.n
    sel = 1.0
    blocks = []
    for p in legs:
        sel *= estimate_selectivity(p, stats)
        blocks.append(leg_blocks(p, stats.segments))
    cand = n * sel
    residuals = len(filters) - len(legs)
    cost = sum(blocks) * C_BLK + cand * (C_KEY + residuals * C_RES)
    return cost, cand, blocks


def full_scan_cost(stats: TableStats, n_filters: int) -> float:
    return stats.n * (C_KEY + n_filters * C_RES) + stats.data_blocks * C_BLK


def filter_plans(spec: QuerySpec, schema, stats: TableStats) -> list[PlanNode]:
    filters = spec.filters
    est_all = stats.n
    for p in filters:
        est_all *= estimate_selectivity(p, stats)
    plans: list[PlanNode] = [FullScan(full_scan_cost(stats, len(filters)), est_all, residuals=filters)]
    servable = servable_predicates(spec, schema)
    singles = []
    for p in servable:
        cost, _, blocks = _filter_cost([p], filters, stats)
        node = IndexFilter(cost, est_all, predicate=p, residuals=tuple(q for q in filters if q is not p),
                           index_blocks=blocks[0])
        singles.append(node)
    plans.extend(singles)
    pool = singles
    if len(pool) > MAX_INTERSECT_LEGS:
        pool = sorted(pool, key=lambda n: estimate_selectivity(n.predicate, stats))[:MAX_INTERSECT_LEGS]
    for r in range(2, len(pool) + 1):
        for combo in itertools.combinations(pool, r):
            legs = [c.predicate for c in combo]
            cost, _, _ = _filter_cost(legs, filters, stats)
            plans.append(IndexIntersect(cost, est_all, legs=tuple(combo),
                                        residuals=tuple(q for q in filters if all(q is not l for l in legs))))
    return plans


def _nra_cost(rank: RankSpec, stats: TableStats, selectivity: float, n_probe: int | None) -> float:
    n = max(1, stats.n)
    k = rank.k
    active = [t for t in rank.terms if t.weight > 0] or list(rank.terms)
    depth = min(n, NRA_DEPTH_FACTOR * k / max(selectivity, 1e-6))
    blocks = 0.0
    for t in active:
        for seg in stats.segments:
            summ = seg.index_summaries.get(t.column)
            if summ is None:
                blocks += seg.stats.data_blocks
                continue
            if t.modality == "vector":
                ncent = len(summ.centroids)
                blocks += 1 + min(ncent, n_probe or ivf.default_n_probe(ncent))
            elif t.modality == "spatial":
                share = depth * seg.stats.row_count / n
                blocks += 1 + math.ceil(share / _SPATIAL_PER_LEAF)
            else:
                blocks += 2 + len(t.query)
    entries = depth * len(active)
    random_access = depth
    return blocks * C_BLK + entries * C_KEY + random_access * (C_BLK + C_KEY)


def rank_plans(spec: QuerySpec, schema, stats: TableStats) -> list[PlanNode]:
    rank = spec.rank
    k = rank.k
    l = len(rank.terms)
    n_probe = spec.options.n_probe
    plans: list[PlanNode] = []
    if spec.filters:
        inputs = filter_plans(spec, schema, stats)
    else:
        inputs = [FullScan(full_scan_cost(stats, 0), stats.n, residuals=())]
    for child in inputs:
        rows = child.estimated_rows
        cost = child.estimated_cost + rows * l * C_RES + rows * C_KEY
        plans.append(TopKSort(cost, min(k, rows), rank=rank, child=child))
    sel = 1.0
    for p in spec.filters:
        sel *= estimate_selectivity(p, stats)
    base = _nra_cost(rank, stats, sel if spec.filters else 1.0, n_probe)
    if not spec.filters:
        plans.append(NraTopK(base, min(k, stats.n), rank=rank, prefilter=None))
    else:
        for child in inputs:
            plans.append(NraTopK(base + child.estimated_cost, min(k, child.estimated_rows), rank=rank,
                                 prefilter=child))
    return plans


def enumerate_plans(spec: QuerySpec, schema, stats: TableStats) -> list[PlanNode]:
    """Every viable plan for ``spec`` with estimated costs filled in."""
    if spec.rank is None:
        return filter_plans(spec, schema, stats)
    return rank_plans(spec, schema, stats)


def cost_plan(plan: PlanNode, stats: TableStats | None = None) -> float:
    return plan.estimated_cost


def choose_plan(plans: list[PlanNode], force: str | None = None) -> PlanNode:
    """Cheapest plan (first on ties); ``force`` restricts to plans whose label matches or starts with it."""
    pool = plans
    if force:
        pool = [p for p in plans if p.label == force] or [p for p in plans if p.label.startswith(force)]
        if not pool:
            from mmdb.errors import QueryError

            raise QueryError(f"no enumerated plan matches {force!r}; options: {[p.label for p in plans]}")
    best = pool[0]
    for p in pool[1:]:
        if p.estimated_cost < best.estimated_cost:
            best = p
    return best
