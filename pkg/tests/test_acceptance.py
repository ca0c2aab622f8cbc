"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict in ``conftest.ACCEPTANCE``; the terminal
summary prints all of them after the run.
"""

import itertools
import math
import threading
import time

import numpy as np
import pytest

from mmdb import Column, Database, IndexSpec, Rect, TableConfig, TableSchema
from mmdb.bench.dataset import DatasetContext, WorkloadConfig, tweet_schema
from mmdb.index import ivf
from mmdb.index.base import Hit, ListIterator
from mmdb.query.executor import choose_and_execute, execute_all_plans, naive_execute
from mmdb.query.nra import nra_topk
from mmdb.query.spec import Mode, QuerySpec, RankSpec, RankTerm, ScalarRange, SpatialContains
from mmdb.views import ViewEngine
from mmdb.views.catalog import FRESH
from mmdb.views.knapsack import select_views

from conftest import ACCEPTANCE, ACCEPTANCE_TITLES, mixed_schema, populate, random_row
from test_query import _random_filter, oracle_filter


def record(n: int, ok: bool, detail: str):
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {ACCEPTANCE_TITLES[n]}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


# -- 1, 2: NRA -------------------------------------------------------------------------------


def _nra_instances(seed: int, count: int = 200):
    """Random instances; a quarter use dyadic distances and weights so exact score ties occur."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        n, l, k = int(rng.integers(50, 501)), int(rng.integers(2, 4)), int(rng.integers(1, 11))
        dist = rng.uniform(0, 1, (n, l))
        w = rng.uniform(0.05, 2.0, l)
        if i % 4 == 0:
            dist = np.round(dist * 8) / 8
            w = np.round(w * 4) / 4 + 0.25
        yield dist, w, k, rng


def _run_nra(dist, w, k):
    its = [ListIterator([Hit(i, float(dist[i, j]), None) for i in range(len(dist))]) for j in range(dist.shape[1])]
    return nra_topk(its, w, k, fetch=lambda key: dist[key].tolist())


def _exhaustive_topk(dist, w, k):
    scores = [(math.fsum(float(a) * float(b) for a, b in zip(row, w)), i) for i, row in enumerate(dist)]
    return [i for _, i in sorted(scores)[:k]]


def test_criterion_01_nra_oracle_equivalence():
    t0 = time.perf_counter()
    exact = total = 0
    for dist, w, k, _ in _nra_instances(11):
        res = _run_nra(dist, w, k)
        exact += res.keys == _exhaustive_topk(dist, w, k)
        total += 1
    elapsed = time.perf_counter() - t0
    record(1, exact == total and elapsed < 60, f"{exact}/{total} instances exact, {elapsed:.1f}s (limit 60s)")


def test_criterion_02_nra_early_termination():
    early = total = 0
    for dist, _, k, rng in _nra_instances(11):
        l = dist.shape[1]
        w = rng.uniform(0.1, 1.0, l)
        w[int(rng.integers(0, l))] = 10.0 * w.max()  # skew at least 10:1
        res = _run_nra(dist, w, k)
        assert res.keys == _exhaustive_topk(dist, w, k)
        early += res.total_consumed < 0.7 * dist.size
        total += 1
    record(2, early >= 0.9 * total, f"{early}/{total} instances stopped below 0.7x full consumption (need 90%)")


# -- 3: IVF ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_03_ivf_recall(tmp_path):
    rng = np.random.default_rng(3)
    n, dim, n_cells = 100_000, 128, 16
    centers = rng.normal(size=(32, dim)) * 0.35  # overlapping clusters, so a partial probe misses neighbours
    vecs = (centers[rng.integers(0, 32, n)] + rng.normal(size=(n, dim))).astype(np.float32)
    schema = TableSchema("v", (Column("id", "int64"), Column("e", "vector", dim)), "id",
                         (IndexSpec("e", "ivf", {"n_centroids": n_cells}),))
    with Database(str(tmp_path), config=TableConfig(background=False, auto_compact=False,
                                                    flush_threshold_bytes=1 << 30)) as db:
        t = db.create_table(schema)
        t.put_many({"id": i, "e": vecs[i]} for i in range(n))
        seg = t.flush_memtable()
        queries = centers[rng.integers(0, 32, 50)] + rng.normal(size=(50, dim))
        base = vecs.astype(np.float64)
        truth = [set(np.argsort(np.linalg.norm(base - q, axis=1), kind="stable")[:10].tolist()) for q in queries]
        means = []
        for n_probe in (1, 2, 4, 8, 16):
            rec = [len({h.key for h in ivf.search_segment(seg, seg.index_regions["e"], q, n_probe, 10)} & tr) / 10
                   for q, tr in zip(queries, truth)]
            means.append(float(np.mean(rec)))
    monotone = all(b >= a - 0.01 for a, b in zip(means, means[1:]))
    record(3, means[-1] == 1.0 and monotone,
           "recall@10 by n_probe 1,2,4,8,16 = " + ", ".join(f"{m:.3f}" for m in means))


# -- 4: pruning -----------------------------------------------------------------------------


def test_criterion_04_index_pruning(tmp_path):
    schema = TableSchema("t", (Column("id", "int64"), Column("a", "int64"), Column("p", "geometry")), "id",
                         (IndexSpec("a", "btree"), IndexSpec("p", "spatial")))
    with Database(str(tmp_path), config=TableConfig(background=False, auto_compact=False)) as db:
        t = db.create_table(schema)
        for i in range(10):
            t.put_many({"id": i * 1000 + j, "a": i * 1000 + j, "p": [i * 100 + j % 50, j // 50]} for j in range(1000))
            t.flush_memtable()
        uids = {s.uid for s in t.segments}
        assert len(uids) == 10

        def touched(spec):
            db.cache.clear()
            before = dict(db.io.reads_by_segment)
            res = choose_and_execute(t, spec)
            return {u for u in uids if db.io.reads_by_segment[u] > before.get(u, 0)}, res

        point, r1 = touched(QuerySpec("t", (ScalarRange("a", 4321, 4321),)))
        region, r2 = touched(QuerySpec("t", (SpatialContains("p", Rect(705, 2, 720, 10)),)))
    ok = len(point) == 1 and len(region) == 1 and r1.keys == [4321] and len(r2.keys) > 0
    record(4, ok, f"point query read {len(point)} segment(s), spatial query read {len(region)} segment(s) of 10")


# -- 5, 6: planning -------------------------------------------------------------------------


def test_criterion_05_plan_equivalence(mixed_table):
    rng = np.random.default_rng(5)
    agree = plans = 0
    for _ in range(100):
        filters = tuple(_random_filter(rng) for _ in range(int(rng.integers(1, 4))))
        spec = QuerySpec("t", filters)
        naive = sorted(naive_execute(mixed_table, spec))
        sure, maybe = oracle_filter(mixed_table, filters)
        assert sure <= set(naive) <= sure | maybe
        results = execute_all_plans(mixed_table, spec)
        plans += len(results)
        agree += sum(sorted(r.keys) == naive for r in results.values())
    record(5, agree == plans, f"{agree}/{plans} plans over 100 specs matched the full-scan evaluator")


def test_criterion_06_multi_index_win(tmp_path):
    schema = TableSchema("x", (Column("id", "int64"), Column("a", "int64"), Column("b", "int64"),
                               Column("pad", "string")), "id", (IndexSpec("a", "btree"), IndexSpec("b", "btree")))
    rng = np.random.default_rng(6)
    path = str(tmp_path / "x")
    with Database(path, config=TableConfig(background=False)) as db:
        db.create_table(schema).put_many(
            {"id": i, "a": int(rng.integers(0, 1000)), "b": int(rng.integers(0, 1000)), "pad": "p" * 100}
            for i in range(50_000))
        db.table("x").flush_memtable()
    with Database(path, cache_bytes=0) as db:
        t = db.table("x")
        spec = QuerySpec("x", (ScalarRange("a", 100, 114), ScalarRange("b", 500, 514)))
        sel = [sum(lo <= r.attrs[c] <= hi for r in t.scan()) / len(t) for c, lo, hi in (("a", 100, 114),
                                                                                      ("b", 500, 514))]
        results = execute_all_plans(t, spec)
        inter = results["IndexIntersect[a:scalar_range+b:scalar_range]"].block_reads
        best_single = min(results["IndexFilter[a:scalar_range]"].block_reads,
                          results["IndexFilter[b:scalar_range]"].block_reads)
        chosen = choose_and_execute(t, spec).plan.label
    ok = max(sel) <= 0.02 and inter <= 0.5 * best_single and chosen.startswith("IndexIntersect")
    record(6, ok, f"selectivities {sel[0]:.4f}/{sel[1]:.4f}, intersect {inter} reads vs best single "
                  f"{best_single}, chosen {chosen}")


# -- 7: ingestion ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_07_ingestion_under_indexing(tmp_path):
    n, dim = 500_000, 32
    ctx = DatasetContext.create(WorkloadConfig(tweets=n, dim=dim))
    rows = ctx.tweets(0, n)
    rates, metrics = {}, {}
    for indexed in (False, True):
        with Database(str(tmp_path / str(indexed)), config=TableConfig(flush_threshold_bytes=8 << 20)) as db:
            t = db.create_table(tweet_schema(dim, 64, indexed))
            t0 = time.perf_counter()
            for i in range(0, n, 1024):
                t.put_many(rows[i:i + 1024])
            assert t.wait_idle(1800)
            rates[indexed] = n / (time.perf_counter() - t0)
            metrics[indexed] = t.metrics
            assert len(t) == n
    ratio = rates[True] / rates[False]
    m = metrics[True]
    ok = ratio >= 0.25 and m.stall_count == 0 and not m.background_errors
    record(7, ok, f"indexed {rates[True]:.0f} rows/s vs plain {rates[False]:.0f} rows/s (ratio {ratio:.2f}, "
                  f"need 0.25), writer stalls {m.stall_count} ({m.stall_seconds:.2f}s), flushes {m.flushes}")


# -- 8: LSM ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_08_lsm_shadow_map(tmp_path):
    schema = TableSchema("t", (Column("id", "int64"), Column("val", "int64"), Column("v", "vector", 4)), "id",
                         (IndexSpec("val", "btree"), IndexSpec("v", "ivf", {"n_centroids": 2})))
    rng = np.random.default_rng(8)
    mismatches = checks = compactions = 0
    with Database(str(tmp_path), config=TableConfig(background=False, auto_compact=False, wal_sync="off",
                                                    flush_threshold_bytes=16 * 1024)) as db:
        t = db.create_table(schema)
        shadow, snaps = {}, []
        for i in range(10_000):
            op = rng.choice(["put"] * 6 + ["del"] * 2 + ["compact", "snap"])
            key = int(rng.integers(0, 400))
            if op == "put":
                val = int(rng.integers(0, 10**6))
                t.put({"id": key, "val": val, "v": [val % 7, 1, 0, 0]})
                shadow[key] = val
            elif op == "del":
                t.delete(key)
                shadow.pop(key, None)
            elif op == "compact" and len(t.segments) >= 2:
                before = [(r.key, r.attrs["val"]) for r in t.scan()]
                t.compact_segments(t.segments[: int(rng.integers(2, len(t.segments) + 1))])
                compactions += 1
                checks += 1
                mismatches += [(r.key, r.attrs["val"]) for r in t.scan()] != before
            elif op == "snap":
                snaps.append((t.snapshot(), dict(shadow)))
                snaps = snaps[-5:]
            probe = int(rng.integers(0, 400))
            got = t.get(probe)
            checks += 1
            mismatches += (got.attrs["val"] if got else None) != shadow.get(probe)
            if i % 250 == 0:
                for s, expect in snaps + [(None, shadow)]:
                    checks += 1
                    mismatches += {r.key: r.attrs["val"] for r in t.scan(s)} != expect
        for s, expect in snaps:
            checks += 1
            mismatches += {r.key: r.attrs["val"] for r in t.scan(s)} != expect
            s.release()
        checks += 1
        mismatches += {r.key: r.attrs["val"] for r in t.scan()} != shadow
    record(8, mismatches == 0 and compactions > 0,
           f"{checks} checks over 10000 ops ({compactions} compactions), {mismatches} mismatches")


# -- 9-12: continuous queries ------------------------------------------------------------------


class _Clock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def test_criterion_09_view_exactness(db):
    t = db.create_table(mixed_schema())
    populate(t, 1500, seed=9, key_space=1200)
    rng = np.random.default_rng(9)
    with ViewEngine(db, clock=_Clock()) as e:
        q = e.register(QuerySpec("t", (SpatialContains("loc", {"rect": [-5, -5, 5, 5]}),), mode=Mode("sync", 1.0)),
                       now=0.0)
        e.register(QuerySpec("t", (), RankSpec((RankTerm("vector", "v", np.zeros(8)),), 5), mode=Mode("sync", 1.0)),
                   now=0.0)
        views = e.force_reselect()
        pool = next(v for v in views if v.flavor == "vector_nn")
        spatial_ok = pool_ok = pool_checked = 0
        for batch in range(50):
            for _ in range(10):
                key = int(rng.integers(0, 1400))
                if rng.random() < 0.25:
                    t.delete(key)
                else:
                    row = random_row(rng, key)
                    row["v"] = row["v"] * rng.uniform(0.1, 1.0)
                    t.put(row)
            res = e.run_query(q)
            direct = sorted(choose_and_execute(t, q.spec.with_options(use_views=False)).keys)
            spatial_ok += res.plan.label.startswith("ViewScan") and sorted(res.keys) == direct
            e.maintain_all()
            if pool.state == FRESH and pool.watermark == t.seqno:
                pool_checked += 1
                pool_ok += [r.key for r in pool.records()] == choose_and_execute(t, pool.definition()).keys
            e.tick(float(batch))
    ok = spatial_ok == 50 and pool_ok == pool_checked > 0
    record(9, ok, f"spatial rewrite equal to direct in {spatial_ok}/50 batches, vector pool equal to recompute "
                  f"at {pool_ok}/{pool_checked} fresh watermarks")


@pytest.mark.slow
def test_criterion_10_view_reuse_benefit(tmp_path):
    n, budget = 200_000, 150_000_000
    rng = np.random.default_rng(10)
    schema = TableSchema("p", (Column("id", "int64"), Column("loc", "geometry"), Column("n", "int64"),
                               Column("s", "string")), "id", (IndexSpec("loc", "spatial"),))
    with Database(str(tmp_path), config=TableConfig(flush_threshold_bytes=4 << 20)) as db:
        t = db.create_table(schema)
        xy = rng.uniform(0, 100, (n, 2))
        t.put_many({"id": i, "loc": {"point": [float(x), float(y)]}, "n": i % 97, "s": "row%07d" % i}
                   for i, (x, y) in enumerate(xy))
        assert t.wait_idle(600)
        density = n / 100.0**2
        specs, sizes = [], []
        for hot in rng.uniform(15, 85, (10, 2)):  # ten hotspots of ten overlapping queries
            group = 0
            while group < 10:
                side = math.sqrt(rng.uniform(1100, 1900) / density)
                x, y = hot + rng.uniform(-2, 2, 2)
                spec = QuerySpec("p", (SpatialContains("loc", {"rect": [x - side / 2, y - side / 2,
                                                                        x + side / 2, y + side / 2]}),),
                                 mode=Mode("sync", 1.0))
                size = len(choose_and_execute(t, spec).keys)
                if 1000 <= size <= 2000:
                    specs.append(spec)
                    sizes.append(size)
                    group += 1
        assert len(specs) == 100
        with ViewEngine(db, budget_bytes=budget, clock=_Clock()) as e:
            qs = [e.register(s, now=0.0) for s in specs]
            e.force_reselect()
            peak = e.catalog.total_bytes
            with_views, without = [], []
            for _ in range(3):
                for _ in range(200):
                    t.put({"id": int(rng.integers(0, n)), "loc": {"point": rng.uniform(0, 100, 2).tolist()},
                           "n": 1, "s": "u"})
                for q in qs:
                    a = time.perf_counter()
                    choose_and_execute(t, q.spec.with_options(use_views=False))
                    without.append(time.perf_counter() - a)
                    a = time.perf_counter()
                    e.run_query(q)
                    with_views.append(time.perf_counter() - a)
                    peak = max(peak, e.catalog.total_bytes)
            linked = sum(bool(q.linked_views) for q in qs)
    ratio = float(np.mean(with_views) / np.mean(without))
    ok = ratio <= 0.6 and peak <= budget
    record(10, ok, f"mean latency {np.mean(with_views) * 1e3:.1f}ms with views vs {np.mean(without) * 1e3:.1f}ms "
                   f"without (ratio {ratio:.2f}, need 0.6), {linked}/100 queries linked, peak view bytes "
                   f"{peak / 1e6:.1f}MB of {budget / 1e6:.0f}MB, result sizes {min(sizes)}-{max(sizes)}")


def test_criterion_11_knapsack_optimality():
    rng = np.random.default_rng(11)
    optimal = over = 0
    runs = 300
    for i in range(runs):
        n = int(rng.integers(1, 11))
        benefits = rng.uniform(0, 100, n).tolist()
        sizes = rng.integers(1, 10**6, n).tolist()
        budget = int(rng.integers(0, sum(sizes) + 1))
        chosen = select_views(benefits, sizes, budget)
        best = max(sum(benefits[j] for j in s) for r in range(n + 1) for s in itertools.combinations(range(n), r)
                   if sum(sizes[j] for j in s) <= budget)
        optimal += math.isclose(sum(benefits[j] for j in chosen), best, rel_tol=1e-9, abs_tol=1e-9)
        over += sum(sizes[j] for j in chosen) > budget
    for _ in range(100):  # larger instances: only the budget is checked
        n = int(rng.integers(11, 200))
        sizes = rng.integers(1, 10**8, n).tolist()
        budget = int(rng.integers(0, sum(sizes)))
        over += sum(sizes[j] for j in select_views(rng.uniform(0, 1, n).tolist(), sizes, budget)) > budget
    record(11, optimal == runs and over == 0,
           f"{optimal}/{runs} small instances optimal, {over} budget violations over {runs + 100} runs")


@pytest.mark.slow
def test_criterion_12_scheduler_semantics(db):
    t = db.create_table(mixed_schema())
    populate(t, 500, seed=12)
    rng = np.random.default_rng(12)
    sync_times, async_seen = [], []
    written = [0]
    burst = threading.Event()

    def on_async(q, res):
        async_seen.append(written[0])
        burst.set()

    def writer(stop):
        while not stop.is_set():
            if burst.wait(0.1):
                burst.clear()
                for _ in range(120):  # every write falls inside the async query's region
                    t.put({**random_row(rng, 100_000 + written[0]), "loc": {"point": [0.5, 0.5]}})
                    written[0] += 1

    with ViewEngine(db, tick_interval=0.5) as e:
        start = time.monotonic()
        e.register(QuerySpec("t", (SpatialContains("loc", {"rect": [-1, -1, 1, 1]}),), mode=Mode("sync", 1.0)),
                   callback=lambda q, r: sync_times.append(time.monotonic() - start))
        e.register(QuerySpec("t", (SpatialContains("loc", {"rect": [0, 0, 1, 1]}),), mode=Mode("async")),
                   callback=on_async)
        stop = threading.Event()
        w = threading.Thread(target=writer, args=(stop,))
        w.start()
        burst.set()
        e.start()
        time.sleep(30.0)
        e.stop()
        stop.set()
        w.join()
    # each async run saw one full burst of 120 triggers since the previous run
    gaps = np.diff([0] + async_seen)
    bursts = math.ceil(written[0] / 120)
    coalesced = len(async_seen) >= 10 and all(g == 120 for g in gaps) and len(async_seen) in (bursts, bursts - 1)
    intervals = np.diff([0.0] + sync_times)
    on_time = 29 <= len(sync_times) <= 31 and all(abs(d - 1.0) <= 1.0 for d in intervals)
    record(12, coalesced and on_time,
           f"{len(sync_times)} sync runs in 30s (intervals {intervals.min():.2f}-{intervals.max():.2f}s), "
           f"{len(async_seen)} async runs for {bursts} bursts of 120 triggers")
