"""Continuous queries over materialized views.

Registered SYNC queries re-run on a fixed interval and ASYNC queries re-run
when a write could change their answer.  Queries are clustered into shared
view candidates, a knapsack picks the views worth their storage, and deltas
captured from table writes keep the picked views current.  Views are
volatile: they are rebuilt from the registered queries after a restart.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from mmdb.index.base import MEMTABLE_SOURCE
from mmdb.index.ivf import l2_distances
from mmdb.query import plan as P
from mmdb.query.executor import QueryResult, ResultRow, _project, choose_and_execute
from mmdb.query.nra import _key_order
from mmdb.query.reader import SnapshotReader, weighted_score
from mmdb.query.spec import Mode, QuerySpec, SpatialContains
from mmdb.errors import QueryError
from mmdb.types import Point
from mmdb.views import clustering
from mmdb.views.catalog import FRESH, STALE_REFILL, MaterializedView, ViewCatalog
from mmdb.views.knapsack import select_views

log = logging.getLogger("mmdb.views")

DEFAULT_BUDGET = 150 * 1024 * 1024
POOL_FACTOR = 4  # x in top-xk
RESELECT_EVERY = 512
EWMA_ALPHA = 0.2
DEFAULT_TRIGGER_RATE = 1.0  # async executions per second assumed before any trigger is observed
ROW_SAMPLE = 256


@dataclass(eq=False)
class ContinuousQuery:
    query_id: int
    spec: QuerySpec
    mode: Mode
    linked_views: list = field(default_factory=list)
    last_digest: str | None = None
    exec_count: int = 0
    total_latency: float = 0.0
    next_due: float | None = None
    trigger_rate: float = DEFAULT_TRIGGER_RATE
    last_result: QueryResult | None = None
    last_keys: frozenset = frozenset()
    callback: Callable | None = None
    _triggers: int = 0

    @property
    def mean_latency(self) -> float:
        return self.total_latency / self.exec_count if self.exec_count else 0.0

    @property
    def frequency(self) -> float:
        if self.mode.kind == "sync":
            return 1.0 / self.mode.interval
        return self.trigger_rate


class ViewScan(P.PlanNode):
    kind = "ViewScan"

    def __init__(self, view: MaterializedView, rows: float):
        super().__init__(0.0, rows)
        self.view_id = view.view_id

    @property
    def label(self) -> str:
        return f"ViewScan[view {self.view_id}]"


def _spatial_filter(spec: QuerySpec):
    preds = [p for p in spec.filters if isinstance(p, SpatialContains)]
    return preds[0] if len(preds) == 1 else None


def _vector_term(spec: QuerySpec):
    if spec.rank is None:
        return None
    live = [t for t in spec.rank.terms if t.weight > 0]
    if len(live) == 1 and live[0].modality == "vector":
        return live[0]
    return None


def _implied(base: tuple, filters: tuple) -> bool:
    return all(any(b == f for f in filters) for b in base)


def _common(filter_sets: list) -> tuple:
    first = filter_sets[0]
    return tuple(p for p in first if all(any(p == q for q in fs) for fs in filter_sets[1:]))


@dataclass
class Candidate:
    flavor: str
    table: str
    column: str
    base_filters: tuple
    members: list
    region: object = None
    center: np.ndarray | None = None
    radius: float = 0.0
    capacity: int = 0
    benefit: float = 0.0
    storage: int = 0


class ViewEngine:
    """Registry, scheduler and view maintenance for one database."""

    def __init__(self, db, budget_bytes: int = DEFAULT_BUDGET, pool_factor: int = POOL_FACTOR,
                 clock: Callable[[], float] = time.monotonic, reselect_every: int = RESELECT_EVERY,
                 seed: int = 0, tick_interval: float = 0.05):
        self.db = db
        self.catalog = ViewCatalog(budget_bytes)
        self.pool_factor = int(pool_factor)
        self.clock = clock
        self.reselect_every = reselect_every
        self.seed = seed
        self.tick_interval = tick_interval
        self.queries: dict[int, ContinuousQuery] = {}
        self.exec_log: deque = deque(maxlen=10000)
        self.delta_probes = 0  # views touched by delta routing
        self._next_qid = 1
        self._next_vid = 1
        self._registrations = 0
        self._lock = threading.RLock()
        self._pending_lock = threading.Lock()
        self._pending: dict[str, list] = {}
        self._listeners: dict[str, Callable] = {}
        self._async_queue: OrderedDict = OrderedDict()
        self._stale: set = set()
        self._last_tick: float | None = None
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    # -- registration --------------------------------------------------------------

    def _table(self, name: str):
        return self.db.table(name)

    def _attach(self, name: str):
        if name in self._listeners:
            return
        table = self._table(name)

        def on_write(record, _name=name):
            with self._pending_lock:
                self._pending.setdefault(_name, []).append(record)

        self._listeners[name] = on_write
        table.add_listener(on_write)

    def register(self, spec: QuerySpec, mode: Mode | None = None, callback: Callable | None = None,
                 now: float | None = None) -> ContinuousQuery:
        """Store a continuous query, link it to matching views, and schedule it."""
        mode = mode or spec.mode
        if mode.kind not in ("sync", "async"):
            raise QueryError("continuous queries need mode sync or async")
        table = self._table(spec.table)
        spec.validate(table.schema)
        with self._lock:
            self._attach(spec.table)
            q = ContinuousQuery(self._next_qid, spec, mode, callback=callback)
            self._next_qid += 1
            q.linked_views = [v.view_id for v in self.match_views(spec)[:1]]
            if mode.kind == "sync":
                q.next_due = (self.clock() if now is None else now) + mode.interval
            self.queries[q.query_id] = q
            self._registrations += 1
            if self.reselect_every and self._registrations % self.reselect_every == 0:
                self.force_reselect()
            return q

    def drop_query(self, query_id: int) -> bool:
        with self._lock:
            self._async_queue.pop(query_id, None)
            return self.queries.pop(query_id, None) is not None

    # -- candidates and selection ------------------------------------------------------

    def cluster_queries(self, queries: list[ContinuousQuery] | None = None) -> list[Candidate]:
        """One view candidate per cluster of similar spatial or vector queries."""
        queries = list(self.queries.values()) if queries is None else queries
        spatial_groups: dict = {}
        vector_groups: dict = {}
        for q in queries:
            sp = _spatial_filter(q.spec)
            vt = _vector_term(q.spec)
            if vt is not None:
                vector_groups.setdefault((q.spec.table, vt.column), []).append((q, vt))
            elif sp is not None and not _has_text(q.spec):
                spatial_groups.setdefault((q.spec.table, sp.column), []).append((q, sp))
        out: list[Candidate] = []
        for (table, col), group in sorted(spatial_groups.items()):
            regions = [sp.region for _, sp in group]
            for members in clustering.cluster_regions(regions):
                qs = [group[i][0] for i in members]
                base = _common([tuple(p for p in q.spec.filters if p is not group[i][1])
                                for q, i in zip(qs, members)])
                out.append(Candidate("spatial_range", table, col, base, [q.query_id for q in qs],
                                     region=clustering.union_rect([regions[i] for i in members])))
        for (table, col), group in sorted(vector_groups.items()):
            vecs = np.stack([np.asarray(t.query, dtype=np.float64) for _, t in group])
            for members in clustering.cluster_vectors(vecs, seed=self.seed):
                qs = [group[i][0] for i in members]
                center = vecs[members].mean(axis=0)
                radius = float(np.sqrt(((vecs[members] - center) ** 2).sum(-1)).max())
                cap = self.pool_factor * max(q.spec.rank.k for q in qs)
                out.append(Candidate("vector_nn", table, col, _common([q.spec.filters for q in qs]),
                                     [q.query_id for q in qs], center=center.astype(np.float32),
                                     radius=radius, capacity=cap))
        return out

    def _estimate(self, cands: list[Candidate]):
        """Benefit (direct cost x frequency over queries the candidate serves) and storage bytes."""
        direct_cost: dict = {}
        snaps = {}
        try:
            for c in cands:
                if c.table not in snaps:
                    table = self._table(c.table)
                    snap = table.snapshot()
                    reader = SnapshotReader(table, snap)
                    stats = P.TableStats(reader.segments, reader.mem_live)
                    snaps[c.table] = (table, snap, stats, _avg_row_bytes(table, snap))
                table, _, stats, row_bytes = snaps[c.table]
                view = self._make_view(c, view_id=0)
                served = [q for q in self.queries.values()
                          if q.spec.table == c.table and self._usable(view, q.spec)]
                benefit = 0.0
                for q in served:
                    if q.query_id not in direct_cost:
                        plans = P.enumerate_plans(q.spec, table.schema, stats)
                        direct_cost[q.query_id] = P.choose_plan(plans).estimated_cost
                    benefit += direct_cost[q.query_id] * q.frequency
                c.benefit = benefit
                if c.flavor == "spatial_range":
                    rows = stats.n
                    for p in view.definition().filters:
                        rows *= P.estimate_selectivity(p, stats)
                else:
                    rows = min(c.capacity, stats.n)
                c.storage = int(math.ceil(rows * row_bytes))
        finally:
            for _, snap, _, _ in snaps.values():
                snap.release()
        return cands

    def _make_view(self, c: Candidate, view_id: int) -> MaterializedView:
        return MaterializedView(view_id, c.flavor, c.table, c.column, c.base_filters, region=c.region,
                                center=c.center, radius=c.radius, capacity=c.capacity, benefit=c.benefit,
                                members=tuple(c.members))

    def force_reselect(self) -> list[MaterializedView]:
        """Re-cluster every registered query, pick views by knapsack, and rebuild them."""
        with self._lock:
            cands = self._estimate(self.cluster_queries())
            chosen = select_views([c.benefit for c in cands], [c.storage for c in cands], self.catalog.budget)
            for vid in list(self.catalog.views):
                self.catalog.remove(vid)
            self._stale.clear()
            built = []
            for i in sorted(chosen, key=lambda i: -cands[i].benefit):
                view = self._make_view(cands[i], self._next_vid)
                self._next_vid += 1
                if self.build_view(view):
                    built.append(view)
            for q in self.queries.values():
                q.linked_views = [v.view_id for v in self.match_views(q.spec)[:1]]
            return built

    def build_view(self, view: MaterializedView) -> bool:
        """Materialize ``view`` at a fresh snapshot; rolls back if it would break the budget."""
        with self._lock:
            table = self._table(view.table)
            self._attach(view.table)
            with table.snapshot() as snap:
                self._maintain(view.table, snap.seqno_bound)
                records = self._definition_records(table, view, snap)
                sizes = [table.codec.encoded_size(r) for r in records]
                others = self.catalog.total_bytes - (view.storage_bytes if view.view_id in self.catalog.views else 0)
                if others + sum(sizes) > self.catalog.budget:
                    self.catalog.remove(view.view_id)
                    return False
                view.load(records, sizes, snap.seqno_bound)
            self.catalog.add(view)
            return True

    def _definition_records(self, table, view: MaterializedView, snap) -> list:
        res = choose_and_execute(table, view.definition().with_options(use_views=False), snapshot=snap)
        out = []
        for row in res.rows:
            r = snap.get(row.key)
            if r is not None:
                out.append(r)
        return out

    def drop_view(self, view_id: int) -> bool:
        with self._lock:
            if view_id not in self.catalog.views:
                return False
            self.catalog.remove(view_id)
            self._stale.discard(view_id)
            for q in self.queries.values():
                if view_id in q.linked_views:
                    q.linked_views = [v for v in q.linked_views if v != view_id]
            return True

    def list_views(self) -> list[dict]:
        with self._lock:
            return [v.describe() for v in sorted(self.catalog.views.values(), key=lambda v: v.view_id)]

    # -- maintenance ---------------------------------------------------------------------

    def _take_pending(self, table: str, upto: int | None) -> list:
        with self._pending_lock:
            items = self._pending.get(table, [])
            if upto is None:
                self._pending[table] = []
                return items
            i = 0
            while i < len(items) and items[i].seqno <= upto:
                i += 1
            self._pending[table] = items[i:]
            return items[:i]

    def apply_delta(self, table_name: str, batch: list) -> set:
        """Fold a batch of writes into every covering view; returns the ids of views changed."""
        with self._lock:
            table = self._table(table_name)
            affected: set = set()
            views = self.catalog.for_table(table_name)
            if views:
                for rec in batch:
                    targets = {v.view_id: v for v in self.catalog.probe(table_name, rec)}
                    for v in self.catalog.holding(table_name, rec.key):
                        targets[v.view_id] = v
                    self.delta_probes += len(targets)
                    for v in targets.values():
                        if rec.seqno <= v.watermark or v.state == STALE_REFILL:
                            continue
                        if v.apply(rec, table.codec.encoded_size(rec)):
                            affected.add(v.view_id)
                            if v.state == STALE_REFILL:
                                self._stale.add(v.view_id)
                if batch:
                    top = batch[-1].seqno
                    for v in views:
                        v.watermark = max(v.watermark, top)
                if affected:
                    self.catalog.invalidate()
                self._enforce_budget()
            self._trigger_async(table_name, batch)
            return affected

    def _maintain(self, table_name: str, upto: int | None = None) -> set:
        batch = self._take_pending(table_name, upto)
        if not batch:
            return set()
        return self.apply_delta(table_name, batch)

    def maintain_all(self) -> set:
        out: set = set()
        with self._lock:
            for name in list(self._listeners):
                t = self._table(name)
                out |= self._maintain(name, t.seqno)
        return out

    def _enforce_budget(self):
        while self.catalog.total_bytes > self.catalog.budget and self.catalog.views:
            worst = min(self.catalog.views.values(),
                        key=lambda v: (v.benefit / max(1, v.storage_bytes), -v.view_id))
            self.drop_view(worst.view_id)

    def rebuild_stale(self) -> int:
        n = 0
        with self._lock:
            for vid in sorted(self._stale):
                v = self.catalog.get(vid)
                if v is not None and self.build_view(v):
                    n += 1
            self._stale.clear()
            self.catalog.invalidate()
        return n

    def _trigger_async(self, table_name: str, batch: list):
        asyncs = [q for q in self.queries.values() if q.mode.kind == "async" and q.spec.table == table_name]
        if not asyncs or not batch:
            return
        for q in asyncs:
            for rec in batch:
                if _relevant(q, rec):
                    q._triggers += 1
                    self._async_queue[q.query_id] = True
                    break

    # -- matching and rewriting ---------------------------------------------------------------

    def _usable(self, view: MaterializedView, spec: QuerySpec) -> bool:
        if view.table != spec.table or not _implied(view.base_filters, spec.filters):
            return False
        if view.flavor == "spatial_range":
            sp = _spatial_filter(spec)
            if sp is None or sp.column != view.column or _has_text(spec):
                return False
            return view.region.contains_rect(sp.region.bbox())
        vt = _vector_term(spec)
        if vt is None or vt.column != view.column or spec.rank.k > view.capacity:
            return False
        return float(l2_distances(np.asarray(view.center)[None, :], vt.query)[0]) <= view.radius

    def match_views(self, spec: QuerySpec) -> list[MaterializedView]:
        """Usable views, best first: smallest containing spatial view, else nearest vector view."""
        with self._lock:
            ok = [v for v in self.catalog.for_table(spec.table) if self._usable(v, spec)]
        spatial = sorted((v for v in ok if v.flavor == "spatial_range"), key=lambda v: (v.region.area, v.view_id))
        vt = _vector_term(spec)
        vector = []
        if vt is not None:
            vector = sorted((v for v in ok if v.flavor == "vector_nn"),
                            key=lambda v: (float(l2_distances(np.asarray(v.center)[None, :], vt.query)[0]),
                                           v.view_id))
        return spatial + vector

    def rewrite_and_execute(self, spec: QuerySpec, views: list | None = None) -> QueryResult:
        """Answer ``spec`` from a matched view, refreshing it first; falls back to direct execution."""
        table = self._table(spec.table)
        spec.validate(table.schema)
        with self._lock:
            if views is None:
                views = self.match_views(spec)
            snap = table.snapshot()
            try:
                self._maintain(spec.table, snap.seqno_bound)
                for v in views:
                    vid = v if isinstance(v, int) else v.view_id
                    view = self.catalog.get(vid)
                    if view is None or view.state != FRESH or view.watermark != snap.seqno_bound:
                        continue
                    if not self._usable(view, spec):
                        continue
                    return self._answer_from_view(table, spec, view, snap)
                return choose_and_execute(table, spec, snapshot=snap)
            finally:
                snap.release()

    def _answer_from_view(self, table, spec: QuerySpec, view: MaterializedView, snap) -> QueryResult:
        t0 = time.perf_counter()
        schema = table.schema
        residual = [p for p in spec.filters if not any(p == b for b in view.base_filters)]
        exact = True
        if view.flavor == "spatial_range":
            sp = _spatial_filter(spec)
            residual = [p for p in residual if p is not sp]
            recs, xs, ys = view.arrays()
            inside = sp.region.contains_points(xs, ys) if len(recs) else np.zeros(0, dtype=bool)
            cand = [recs[i] for i in np.nonzero(inside)[0]]
            cand = [r for r in cand if all(p.matches(r.attrs) for p in residual)]
            if spec.rank is None:
                rows = [ResultRow(r.key, _project(spec, schema, r)) for r in cand]
            else:
                reader = SnapshotReader(table, snap)
                scored = []
                for r in cand:
                    d = reader.distances(spec.rank, r, MEMTABLE_SOURCE)
                    if d is not None:
                        scored.append((weighted_score(spec.rank.weights, d), r, d))
                scored.sort(key=lambda t: (t[0], _key_order(t[1].key)))
                rows = [ResultRow(r.key, _project(spec, schema, r), tuple(d), s) for s, r, d in scored[: spec.rank.k]]
        else:
            vt = _vector_term(spec)
            pool = [r for r in view.records() if all(p.matches(r.attrs) for p in residual)]
            if pool:
                vecs = np.stack([np.asarray(r.attrs[view.column], dtype=np.float32) for r in pool])
                d = l2_distances(vecs, vt.query)
            else:
                d = np.zeros(0)
            terms = spec.rank.terms
            scored = []
            for r, dv in zip(pool, d):
                dists = [float(dv) if t is vt else _cheap_distance(t, r) for t in terms]
                scored.append((weighted_score(spec.rank.weights, dists), r, dists))
            scored.sort(key=lambda t: (t[0], _key_order(t[1].key)))
            rows = [ResultRow(r.key, _project(spec, schema, r), tuple(ds), s) for s, r, ds in scored[: spec.rank.k]]
            exact = not residual and np.array_equal(np.asarray(view.center, dtype=np.float32), vt.query)
        view.hit_count += 1
        node = ViewScan(view, len(rows))
        node.actual_rows = len(rows)
        node.actual_block_reads = 0
        return QueryResult(rows, node, [node], exact, 0, time.perf_counter() - t0, 0, snap.seqno_bound)

    def execute(self, spec: QuerySpec) -> QueryResult:
        """Snapshot query: dynamic view matching, or direct execution when none applies."""
        if spec.options.use_views and self.catalog.views:
            return self.rewrite_and_execute(spec)
        return choose_and_execute(self._table(spec.table), spec)

    # -- scheduling -------------------------------------------------------------------------------

    def run_query(self, q: ContinuousQuery) -> QueryResult:
        t0 = time.perf_counter()
        if q.linked_views:
            res = self.rewrite_and_execute(q.spec, list(q.linked_views))
        else:
            res = choose_and_execute(self._table(q.spec.table), q.spec)
        latency = time.perf_counter() - t0
        q.exec_count += 1
        q.total_latency += latency
        q.last_result = res
        q.last_keys = frozenset(res.keys)
        q.last_digest = _digest(res)
        used = [res.plan.view_id] if isinstance(res.plan, ViewScan) else []
        entry = {"query_id": q.query_id, "mode": q.mode.kind, "used_views": used,
                 "latency_ms": latency * 1000, "exact": res.exact, "time": self.clock()}
        self.exec_log.append(entry)
        log.info("query_id=%d mode=%s used_views=%s latency_ms=%.3f %s", q.query_id, q.mode.kind, used,
                 latency * 1000, "exact" if res.exact else "approximate")
        if q.callback is not None:
            q.callback(q, res)
        return res

    def tick(self, now: float | None = None) -> list[tuple[int, str]]:
        """Apply pending deltas, refill stale views, then fire due SYNC and queued ASYNC queries."""
        now = self.clock() if now is None else now
        fired = []
        with self._lock:
            self.maintain_all()
            if self._stale:
                self.rebuild_stale()
            for q in sorted(self.queries.values(), key=lambda q: q.query_id):
                if q.mode.kind == "sync" and q.next_due is not None and q.next_due <= now:
                    self.run_query(q)
                    fired.append((q.query_id, "sync"))
                    while q.next_due <= now:
                        q.next_due += q.mode.interval
            dt = None if self._last_tick is None else max(1e-9, now - self._last_tick)
            queued = list(self._async_queue)
            self._async_queue.clear()
            for q in self.queries.values():
                if q.mode.kind == "async":
                    if dt is not None:
                        q.trigger_rate = EWMA_ALPHA * (q._triggers / dt) + (1 - EWMA_ALPHA) * q.trigger_rate
                    q._triggers = 0
            for qid in queued:
                q = self.queries.get(qid)
                if q is not None:
                    self.run_query(q)
                    fired.append((qid, "async"))
            self._last_tick = now
        return fired

    def start(self):
        """Run :meth:`tick` on a timer thread."""
        if self._thread is not None:
            return
        self._stop.clear()

        def loop():
            while not self._stop.wait(self.tick_interval):
                try:
                    self.tick()
                except Exception:  # keep the timer alive; the failure is logged
                    log.exception("scheduler tick failed")

        self._thread = threading.Thread(target=loop, name="mmdb-views", daemon=True)
        self._thread.start()

    def stop(self):
        if self._thread is not None:
            self._stop.set()
            self._thread.join()
            self._thread = None

    def close(self):
        self.stop()
        for name, fn in self._listeners.items():
            try:
                self._table(name).remove_listener(fn)
            except Exception:  # table already closed
                pass
        self._listeners.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _has_text(spec: QuerySpec) -> bool:
    return spec.rank is not None and any(t.modality == "text" for t in spec.rank.terms)


def _cheap_distance(term, record) -> float:
    v = record.attrs.get(term.column)
    if term.modality == "vector":
        return math.inf if v is None else float(l2_distances(np.asarray(v)[None, :], term.query)[0])
    if term.modality == "spatial":
        return float(np.hypot(v.x - term.query.x, v.y - term.query.y)) if isinstance(v, Point) else math.inf
    return 1.0  # text terms carry zero weight here


def _relevant(q: ContinuousQuery, rec) -> bool:
    """Whether a write could change ``q``'s last answer."""
    if rec.key in q.last_keys:
        return True
    if rec.tombstone:
        return False
    return all(p.matches(rec.attrs) for p in q.spec.filters)


def _digest(res: QueryResult) -> str:
    return repr([(r.key, None if r.score is None else round(r.score, 12)) for r in res.rows])


def _avg_row_bytes(table, snap) -> float:
    sizes = []
    for r in snap.scan():
        sizes.append(table.codec.encoded_size(r))
        if len(sizes) >= ROW_SAMPLE:
            break
    return float(np.mean(sizes)) if sizes else 64.0
