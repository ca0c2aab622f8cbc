"""Plan execution over a snapshot: candidate-set filtering and masked top-k aggregation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from mmdb.errors import ExecutionError, MmdbError, QueryError
from mmdb.index import btree, ivf, spatial, text
from mmdb.index.base import MEMTABLE_SOURCE, CandidateSet, Hit, ListIterator, LazySortedIterator, merge_sorted_iterators
from mmdb.index.ivf import l2_distances
from mmdb.query import plan as P
from mmdb.query.nra import _key_order, nra_topk
from mmdb.query.reader import SnapshotReader, weighted_score
from mmdb.query.spec import Keyword, QuerySpec, ScalarRange, SpatialContains, VectorThreshold
from mmdb.types import Point

TEXT_MAX_DISTANCE = 1.0  # tf-idf distances lie in (0, 1]


@dataclass
class ResultRow:
    key: Any
    values: dict
    distances: tuple | None = None
    score: float | None = None


@dataclass
class QueryResult:
    rows: list
    plan: P.PlanNode
    plans: list = field(default_factory=list)
    exact: bool = True
    block_reads: int = 0
    elapsed: float = 0.0
    entries_consumed: int = 0
    seqno: int = 0

    @property
    def keys(self) -> list:
        return [r.key for r in self.rows]

    def __len__(self):
        return len(self.rows)

    def explain(self) -> str:
        return self.plan.explain()


# -- filter legs -----------------------------------------------------------------


def _btree_bounds(pred: ScalarRange, summary):
    lo, hi = pred.lo, pred.hi
    if lo is None:
        lo = summary.min
    if hi is None:
        hi = summary.max
    return lo, hi


def _prune_ids(table, pred, segments) -> set:
    """Segment ids that may hold matches: global-index pruning, plus summary checks for
    snapshot segments the global index no longer tracks (compacted away but pinned)."""
    col = pred.column
    if isinstance(pred, ScalarRange):
        q = (pred.lo, pred.hi)
    elif isinstance(pred, SpatialContains):
        q = pred.region
    elif isinstance(pred, Keyword):
        q = pred.token
    else:
        q = (pred.query, pred.threshold)
    ids = {e.segment_id for e in table.global_index.prune(col, q)}
    known = table.global_index.segment_ids(col)
    for s in segments:
        if s.segment_id not in known and P.segment_may_match(pred, s):
            ids.add(s.segment_id)
    return ids


def leg_candidates(segment, pred) -> CandidateSet:
    """Index lookup of ``pred`` within one segment (a superset of the matches)."""
    root = segment.index_regions.get(pred.column)
    if root is None:
        raise ExecutionError(f"segment {segment.segment_id} has no index on {pred.column!r}")
    sid = segment.segment_id
    if isinstance(pred, ScalarRange):
        summary = segment.index_summaries[pred.column]
        if summary.count == 0:
            return CandidateSet()
        lo, hi = _btree_bounds(pred, summary)
        return CandidateSet({(sid, k): h for k, h in btree.range_lookup(segment, root, lo, hi)})
    if isinstance(pred, SpatialContains):
        hits = spatial.range_filter(segment, root, pred.region)
    elif isinstance(pred, Keyword):
        hits = text.keyword_filter(segment, root, pred.token)
    elif isinstance(pred, VectorThreshold):
        hits = ivf.threshold_lookup(segment, root, pred.query, pred.threshold)
    else:  # pragma: no cover
        raise ExecutionError(f"unsupported predicate {pred!r}")
    return CandidateSet.from_hits(hits)


def _matches_all(filters, attrs) -> bool:
    return all(p.matches(attrs) for p in filters)


def filter_records(filters, records: list) -> list:
    """The records satisfying every filter, evaluated one predicate at a time over the survivors."""
    for p in filters:
        if not records:
            break
        m = p.mask(records)
        records = [r for r, ok in zip(records, m) if ok]
    return records


def run_filter(node: P.PlanNode, reader: SnapshotReader, filters) -> list:
    """``(source, record)`` of live rows satisfying every filter, sorted by key."""
    out = [(MEMTABLE_SOURCE, r) for r in filter_records(filters, reader.mem_live)]
    if isinstance(node, P.FullScan):
        for i, seg in enumerate(reader.segments):
            live = [r for r in seg.scan() if not r.tombstone and not reader.shadowed(i, r.key)]
            out.extend((seg.segment_id, r) for r in filter_records(filters, live))
    else:
        legs = [node.predicate] if isinstance(node, P.IndexFilter) else [l.predicate for l in node.legs]
        pruned = [_prune_ids(reader.table, p, reader.segments) for p in legs]
        for i, seg in enumerate(reader.segments):
            sid = seg.segment_id
            if any(sid not in ids for ids in pruned):
                continue
            cands = None
            for p in legs:
                c = leg_candidates(seg, p)
                cands = c if cands is None else cands & c
                if not cands:
                    break
            if not cands:
                continue
            fetched = []
            for (src, key), h in sorted(cands.items(), key=lambda t: _key_order(t[0][1])):
                if reader.shadowed(i, key):
                    continue
                r = seg.fetch(key, h)
                if r is not None and not r.tombstone:
                    fetched.append(r)
            out.extend((sid, r) for r in filter_records(filters, fetched))
    out.sort(key=lambda t: _key_order(t[1].key))
    return out


# -- rank sources -------------------------------------------------------------------


def _hits_for(reader, term, records, source: int) -> list:
    records = [r for r, ok in zip(records, reader.appears_many(term, records)) if ok]
    d = reader.term_distances(term, records, source)
    return [Hit(r.key, float(x), None, source) for r, x in zip(records, d)]


def _scan_hits(reader, term, seg_index: int):
    seg = reader.segments[seg_index]
    return _hits_for(reader, term, [r for r in seg.scan() if not r.tombstone], seg.segment_id)


def term_iterator(reader: SnapshotReader, term, n_probe: int | None):
    """Merged sorted-distance source for one rank term over the whole snapshot."""
    mem = _hits_for(reader, term, reader.mem_live, MEMTABLE_SOURCE)
    iters = [ListIterator(mem, contains=reader.mem_keys.__contains__)]
    for i, seg in enumerate(reader.segments):
        root = seg.index_regions.get(term.column)
        if root is None:
            iters.append(LazySortedIterator(lambda i=i: iter(sorted(_scan_hits(reader, term, i),
                                                                    key=lambda h: (h.distance, _key_order(h.key)))),
                                            contains=seg.keys.__contains__))
        elif term.modality == "vector":
            summ = seg.index_summaries.get(term.column)
            ncent = len(summ.centroids) if summ is not None else 1
            probe = ncent if n_probe is None else n_probe
            probe = max(1, min(probe, max(1, ncent)))
            iters.append(ivf.segment_iterator(seg, term.column, root, term.query, probe))
        elif term.modality == "spatial":
            iters.append(spatial.segment_iterator(seg, term.column, root, term.query))
        else:
            iters.append(text.segment_iterator(seg, term.column, root, list(term.query)))
    missing = text.MISSING_DISTANCE if term.modality == "text" else None
    it = merge_sorted_iterators(iters, missing_distance=missing) if len(iters) > 1 else iters[0]
    it.missing_distance = missing
    if term.modality == "text":
        it.max_distance = TEXT_MAX_DISTANCE
    return it


def _sort_topk(reader, rank, rows) -> list:
    weights = rank.weights
    scored = [(weighted_score(weights, d), r, d) for _, r, d in reader.distances_many(rank, rows)]
    scored.sort(key=lambda t: (t[0], _key_order(t[1].key)))
    return scored[: rank.k]


def run_nra(node: P.NraTopK, reader: SnapshotReader, spec: QuerySpec):
    rank = spec.rank
    mask_keys = None
    if node.prefilter is not None:
        mask_keys = {r.key for _, r in run_filter(node.prefilter, reader, spec.filters)}
    iters = [term_iterator(reader, t, spec.options.n_probe) for t in rank.terms]
    fetched: dict = {}

    def fetch(key):
        found = reader.lookup(key)
        if found is None:
            return None
        src, r = found
        d = reader.distances(rank, r, src)
        if d is not None:
            fetched[key] = (r, d)
        return d

    mode = spec.options.nra_mode
    mask = None if mask_keys is None else mask_keys.__contains__
    res = nra_topk(iters, rank.weights, rank.k, mask=mask, mode=mode,
                   fetch=fetch if mode == "refine" else None)
    out = []
    for key, score in res.items:
        if key in fetched:
            r, d = fetched[key]
        else:
            found = reader.lookup(key)
            r = found[1]
            d = reader.distances(rank, r, found[0]) if mode == "refine" else None
        out.append((score, r, d))
    return out, res


# -- drivers ------------------------------------------------------------------------------


def _project(spec: QuerySpec, schema, record) -> dict:
    cols = spec.projection or tuple(c.name for c in schema.columns)
    return {c: (record.key if c == schema.primary_key else record.attrs.get(c)) for c in cols}


def execute_plan(node: P.PlanNode, spec: QuerySpec, reader: SnapshotReader) -> tuple[list, bool, int]:
    schema = reader.schema
    consumed = 0
    exact = True
    if isinstance(node, P.NraTopK):
        scored, res = run_nra(node, reader, spec)
        consumed = res.total_consumed
        exact = res.exact
        rows = [ResultRow(r.key, _project(spec, schema, r), None if d is None else tuple(d), s)
                for s, r, d in scored]
        if node.prefilter is not None:
            node.prefilter.actual_rows = None
    elif isinstance(node, P.TopKSort):
        base = run_filter(node.child, reader, spec.filters)
        node.child.actual_rows = len(base)
        scored = _sort_topk(reader, spec.rank, base)
        rows = [ResultRow(r.key, _project(spec, schema, r), tuple(d), s) for s, r, d in scored]
    else:
        base = run_filter(node, reader, spec.filters)
        rows = [ResultRow(r.key, _project(spec, schema, r)) for _, r in base]
    return rows, exact, consumed


def plan_query(table, spec: QuerySpec, reader: SnapshotReader) -> list[P.PlanNode]:
    stats = P.TableStats(reader.segments, reader.mem_live)
    return P.enumerate_plans(spec, table.schema, stats)


def choose_and_execute(table, spec: QuerySpec, snapshot=None) -> QueryResult:
    """Plan ``spec`` against a snapshot of ``table``, run the cheapest plan, and report actuals."""
    spec.validate(table.schema)
    own = snapshot is None
    snap = table.snapshot() if own else snapshot
    try:
        reader = SnapshotReader(table, snap)
        plans = plan_query(table, spec, reader)
        chosen = P.choose_plan(plans, spec.options.force_plan)
        io = reader.io
        before = io.physical_reads
        t0 = time.perf_counter()
        try:
            rows, exact, consumed = execute_plan(chosen, spec, reader)
        except QueryError:
            raise
        except (MmdbError, ValueError, KeyError, TypeError) as exc:
            raise ExecutionError(str(exc), plan=chosen.label) from exc
        elapsed = time.perf_counter() - t0
        chosen.actual_rows = len(rows)
        chosen.actual_block_reads = io.physical_reads - before
        return QueryResult(rows, chosen, plans, exact, chosen.actual_block_reads, elapsed, consumed,
                           snap.seqno_bound)
    finally:
        if own:
            snap.release()


def execute_all_plans(table, spec: QuerySpec) -> dict:
    """Run every enumerated plan on one snapshot; maps plan label to its result."""
    spec.validate(table.schema)
    with table.snapshot() as snap:
        reader = SnapshotReader(table, snap)
        labels = [p.label for p in plan_query(table, spec, reader)]
        return {lab: choose_and_execute(table, spec.with_options(force_plan=lab), snapshot=snap)
                for lab in labels}


def explain(table, spec: QuerySpec) -> str:
    res = choose_and_execute(table, spec)
    lines = [res.plan.explain(), f"elapsed_ms={res.elapsed * 1000:.2f} block_reads={res.block_reads}",
             "alternatives:"]
    lines += [f"  {p.label} cost={p.estimated_cost:.3f}" for p in res.plans]
    return "\n".join(lines)


def naive_execute(table, spec: QuerySpec) -> list:
    """Reference evaluation over a full scan without any index: keys (and scores for rank queries)."""
    with table.snapshot() as snap:
        reader = SnapshotReader(table, snap)
        rows = [(src, r) for src, r in reader.live_rows() if _matches_all(spec.filters, r.attrs)]  # row-at-a-time reference
        if spec.rank is None:
            return sorted((r.key for _, r in rows), key=_key_order)
        return [(r.key, s) for s, r, _ in _sort_topk(reader, spec.rank, rows)]
