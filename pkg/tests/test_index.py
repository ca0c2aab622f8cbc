import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmdb import Column, Database, IndexSpec, Point, Polygon, Rect, TableConfig, TableSchema
from mmdb.index import btree, ivf, spatial, text
from mmdb.index.base import CandidateSet, Hit, ListIterator, merge_sorted_iterators
from mmdb.index.bloom import BloomFilter
from mmdb.index.framework import build_segment_indexes
from mmdb.query.executor import term_iterator
from mmdb.query.reader import SnapshotReader
from mmdb.query.spec import RankTerm


def _db(tmp_path, **kw):
    return Database(str(tmp_path), config=TableConfig(background=False, auto_compact=False, **kw))


def _schema(*cols, idx=()):
    return TableSchema("t", (Column("id", "int64"),) + tuple(cols), "id", tuple(idx))


# -- index framework ---------------------------------------------------------------------


def test_three_indexed_columns_three_regions(tmp_path):
    schema = _schema(Column("a", "int64"), Column("b", "text"), Column("c", "geometry"),
                     idx=(IndexSpec("a", "btree"), IndexSpec("b", "inverted"), IndexSpec("c", "spatial")))
    with _db(tmp_path) as db:
        t = db.create_table(schema)
        t.put_many({"id": i, "a": i, "b": "x y", "c": [i, i]} for i in range(10))
        assert set(t.flush_memtable().index_regions) == {"a", "b", "c"}


def test_zero_rows_give_empty_regions(tmp_path):
    schema = _schema(Column("a", "int64"), idx=(IndexSpec("a", "btree"),))
    with _db(tmp_path) as db:
        t = db.create_table(schema)
        t.put({"id": 1, "a": 1})
        t.delete(1)
        seg = t.flush_memtable()
        root = seg.index_regions["a"]
        assert btree.range_lookup(seg, root, -10, 10) == []


def test_btree_range_resolves_exact_handles(tmp_path):
    schema = _schema(Column("a", "int64"), idx=(IndexSpec("a", "btree"),))
    with _db(tmp_path) as db:
        t = db.create_table(schema)
        t.put_many({"id": i, "a": i} for i in range(1, 101))
        seg = t.flush_memtable()
        hits = btree.range_lookup(seg, seg.index_regions["a"], 10, 20)
        assert sorted(k for k, _ in hits) == list(range(10, 21))
        for k, h in hits:
            assert seg.fetch(k, h).attrs["a"] == k


def _ten_disjoint_segments(db):
    schema = _schema(Column("a", "int64"), Column("p", "geometry"),
                     idx=(IndexSpec("a", "btree"), IndexSpec("p", "spatial")))
    t = db.create_table(schema)
    for i in range(10):
        t.put_many({"id": i * 100 + j, "a": i * 10 + j % 10, "p": [i * 10 + (j % 10), j % 7]} for j in range(100))
        t.flush_memtable()
    return t


def test_prune_exactly_one_segment(tmp_path):
    with _db(tmp_path) as db:
        t = _ten_disjoint_segments(db)
        ids = sorted(s.segment_id for s in t.segments)
        got = {e.segment_id for e in t.global_index.prune("a", (35, 36))}
        assert got == {ids[3]}
        assert {e.segment_id for e in t.global_index.prune("a", (-1, 1000))} == set(ids)
        t.global_index.remove(ids[3])
        assert t.global_index.prune("a", (35, 36)) == []


def test_prune_vector_superset_of_true_topk(tmp_path):
    schema = _schema(Column("v", "vector", 4), idx=(IndexSpec("v", "ivf", {"n_centroids": 4}),))
    rng = np.random.default_rng(2)
    with _db(tmp_path) as db:
        t = db.create_table(schema)
        owner = {}
        for s in range(6):
            base = rng.normal(size=4) * 5
            rows = [{"id": s * 100 + j, "v": base + rng.normal(size=4)} for j in range(100)]
            t.put_many(rows)
            sid = t.flush_memtable().segment_id
            owner.update({r["id"]: sid for r in rows})
        allv = {r.key: r.attrs["v"] for r in t.scan()}
        keys = list(allv)
        mat = np.stack([allv[k] for k in keys])
        for _ in range(30):
            q = rng.normal(size=4) * 5
            d = ivf.l2_distances(mat, q)
            top = np.argsort(d)[:10]
            radius = float(d[top[-1]])
            pruned = {e.segment_id for e in t.global_index.prune("v", (q, radius))}
            assert {owner[keys[i]] for i in top} <= pruned


def test_merge_sorted_iterators_basic():
    def it(pairs, src):
        return ListIterator([Hit(k, d, None, src) for k, d in pairs])

    m = merge_sorted_iterators([it([("a", 1), ("c", 3), ("e", 5)], 0), it([("b", 2), ("d", 4)], 1)])
    assert [h.distance for h in m] == [1, 2, 3, 4, 5]
    single = it([("a", 1)], 0)
    assert merge_sorted_iterators([single]) is single


def test_merge_emits_newest_version_once(tmp_path):
    schema = _schema(Column("p", "geometry"), idx=(IndexSpec("p", "spatial"),))
    with _db(tmp_path) as db:
        t = db.create_table(schema)
        t.put({"id": 1, "p": [0.1, 0.1]})
        t.put({"id": 2, "p": [5, 5]})
        old = t.flush_memtable()
        t.put({"id": 1, "p": [3, 3]})
        new = t.flush_memtable()
        with t.snapshot() as snap:
            reader = SnapshotReader(t, snap)
            hits = list(term_iterator(reader, RankTerm("spatial", "p", [0, 0]), None))
        assert [h.key for h in hits] == [1, 2]
        assert hits[0].source == new.segment_id and hits[0].distance == pytest.approx(math.hypot(3, 3))
        assert old.segment_id != new.segment_id


@given(st.lists(st.lists(st.floats(0, 100, allow_nan=False), max_size=20), min_size=1, max_size=5))
def test_merge_monotone(lists):
    iters = [ListIterator([Hit((i, j), d, None, i) for j, d in enumerate(ds)]) for i, ds in enumerate(lists)]
    out = [h.distance for h in merge_sorted_iterators(iters)]
    assert out == sorted(out)
    assert len(out) == sum(len(x) for x in lists)


def test_candidate_set_algebra_matches_sets():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a = {(int(rng.integers(0, 3)), int(k)) for k in rng.integers(0, 50, rng.integers(0, 30))}
        b = {(int(rng.integers(0, 3)), int(k)) for k in rng.integers(0, 50, rng.integers(0, 30))}
        ca = CandidateSet({p: None for p in a})
        cb = CandidateSet({p: None for p in b})
        assert (ca & cb).positions() == a & b
        assert (ca | cb).positions() == a | b


@given(st.sets(st.text(min_size=1, max_size=12), max_size=200))
def test_bloom_no_false_negatives(items):
    bf = BloomFilter.for_capacity(len(items), 0.01)
    for x in items:
        bf.add(x)
    restored, _ = BloomFilter.from_bytes(bf.to_bytes())
    assert all(x in bf and x in restored for x in items)


def test_filter_no_false_negatives(mixed_table):
    from mmdb.query.executor import leg_candidates
    from mmdb.query.spec import Keyword, ScalarRange, SpatialContains, VectorThreshold

    rng = np.random.default_rng(5)
    preds = [ScalarRange("n", 10, 30), Keyword("txt", "storm"),
             SpatialContains("loc", Rect(-3, -3, 2, 4)), VectorThreshold("v", rng.normal(size=8), 3.5)]
    for p in preds:
        for seg in mixed_table.segments:
            truth = {r.key for r in seg.scan() if not r.tombstone and p.matches(r.attrs)}
            assert truth <= leg_candidates(seg, p).keys()


# -- vector ivf ------------------------------------------------------------------------------


def test_train_centroids_planted_clusters():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(200, 3)) * 0.1 + 10
    b = rng.normal(size=(200, 3)) * 0.1 - 10
    x = np.vstack([a, b])
    c = ivf.train_centroids(x, 2, seed=1)
    lab = ivf.assign(x, c)
    assert len(set(lab[:200])) == 1 and len(set(lab[200:])) == 1 and lab[0] != lab[200]
    for cluster, cen in ((a, c[lab[0]]), (b, c[lab[200]])):
        assert np.all(cen >= cluster.min(axis=0)) and np.all(cen <= cluster.max(axis=0))


def test_train_centroids_degenerate():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, 4))
    assert np.allclose(ivf.train_centroids(x, 1)[0], x.mean(axis=0), atol=1e-5)
    same = np.ones((5, 4))
    assert len(ivf.train_centroids(same, 16)) == 1


def _ivf_table(db, n=1000, n_centroids=16, dim=8, seed=0, segments=1):
    schema = _schema(Column("v", "vector", dim), idx=(IndexSpec("v", "ivf", {"n_centroids": n_centroids}),))
    t = db.create_table(schema)
    rng = np.random.default_rng(seed)
    per = n // segments
    for s in range(segments):
        t.put_many({"id": s * per + i, "v": rng.normal(size=dim)} for i in range(per))
        t.flush_memtable()
    return t


def _brute(t, q, k):
    rows = [(float(np.linalg.norm(r.attrs["v"].astype(np.float64) - q)), r.key) for r in t.scan()]
    return sorted(rows)[:k]


def test_ivf_conservation_and_compaction(tmp_path):
    with _db(tmp_path) as db:
        schema = _schema(Column("v", "vector", 4), idx=(IndexSpec("v", "ivf", {"n_centroids": 16}),))
        t = db.create_table(schema)
        rng = np.random.default_rng(3)
        t.put_many({"id": i, "v": rng.normal(size=4)} for i in range(600))
        s1 = t.flush_memtable()
        t.put_many({"id": 600 + i, "v": rng.normal(size=4)} for i in range(400))
        s2 = t.flush_memtable()
        assert int(s1.index_summaries["v"].lengths.sum()) + int(s2.index_summaries["v"].lengths.sum()) == 1000
        out = t.compact_segments([s1, s2])
        assert int(out.index_summaries["v"].lengths.sum()) == 1000


def test_ivf_empty_segment(tmp_path):
    schema = TableSchema("t", (Column("id", "int64"), Column("v", "vector", 4), Column("x", "int64")), "id",
                         (IndexSpec("v", "ivf", {"n_centroids": 4}),))
    with _db(tmp_path) as db:
        t = db.create_table(schema)
        t.put_many({"id": i, "x": i} for i in range(10))
        seg = t.flush_memtable()
        assert len(seg.index_summaries["v"].centroids) == 0
        assert ivf.search_segment(seg, seg.index_regions["v"], np.zeros(4), 4, 5) == []


def test_ivf_full_probe_exact(tmp_path):
    with _db(tmp_path) as db:
        t = _ivf_table(db)
        seg = t.segments[0]
        rng = np.random.default_rng(9)
        for _ in range(20):
            q = rng.normal(size=8)
            hits = ivf.search_segment(seg, seg.index_regions["v"], q, 16, 10)
            assert [h.key for h in hits] == [k for _, k in _brute(t, q, 10)]


def test_ivf_single_probe_at_centroid(tmp_path):
    with _db(tmp_path) as db:
        t = _ivf_table(db)
        seg = t.segments[0]
        root = ivf.read_root(seg, seg.index_regions["v"])
        cell = 3
        q = root.centroids[cell].astype(np.float64)
        members = ivf.read_posting(seg, root, cell)
        keys = list(members["key"])
        vecs = np.asarray(members["vec"], dtype=np.float32)
        d = ivf.l2_distances(vecs, q)
        expect = [keys[i] for i in np.lexsort((np.asarray(keys), d))[:5]]
        got = ivf.search_segment(seg, seg.index_regions["v"], q, 1, 5)
        assert [h.key for h in got] == expect


def test_ivf_block_reads_bound(tmp_path):
    with _db(tmp_path) as db:
        t = _ivf_table(db)
        seg = t.segments[0]
        k = 10
        db.cache.clear()
        before = db.io.physical_reads
        ivf.search_segment(seg, seg.index_regions["v"], np.zeros(8), 4, k)
        assert db.io.physical_reads - before <= 1 + 4 + k


def test_ivf_iterator_full_probe_sorted(tmp_path):
    with _db(tmp_path) as db:
        t = _ivf_table(db, n=400)
        q = np.random.default_rng(4).normal(size=8)
        with t.snapshot() as snap:
            seq = [(h.distance, h.key) for h in term_iterator(SnapshotReader(t, snap), RankTerm("vector", "v", q), None)]
        ref = _brute(t, q, 400)
        assert [k for _, k in seq] == [k for _, k in ref]
        assert np.allclose([d for d, _ in seq], [d for d, _ in ref], atol=1e-5)


def test_ivf_iterator_two_segments_monotone_and_empty(tmp_path):
    with _db(tmp_path) as db:
        t = _ivf_table(db, n=600, segments=2)
        with t.snapshot() as snap:
            ds = [h.distance for h in term_iterator(SnapshotReader(t, snap), RankTerm("vector", "v", np.ones(8)), 2)]
        assert ds == sorted(ds)
    with _db(tmp_path / "e") as db:
        t = db.create_table(_schema(Column("v", "vector", 8), idx=(IndexSpec("v", "ivf", {"n_centroids": 4}),)))
        with t.snapshot() as snap:
            it = term_iterator(SnapshotReader(t, snap), RankTerm("vector", "v", np.ones(8)), None)
            assert it.next() is None and it.exhausted


def test_ivf_recall_monotone_in_nprobe(tmp_path):
    with _db(tmp_path) as db:
        t = _ivf_table(db, n=2000, n_centroids=16, seed=2)
        seg = t.segments[0]
        rng = np.random.default_rng(7)
        qs = rng.normal(size=(50, 8))
        means = []
        for npb in (1, 2, 4, 8, 16):
            rec = []
            for q in qs:
                got = {h.key for h in ivf.search_segment(seg, seg.index_regions["v"], q, npb, 10)}
                rec.append(len(got & {k for _, k in _brute(t, q, 10)}) / 10)
            means.append(np.mean(rec))
        assert all(b >= a - 1e-9 for a, b in zip(means, means[1:]))
        assert means[-1] == 1.0


# -- spatial -------------------------------------------------------------------------------


def test_zorder_domain_minimum_and_roundtrip():
    assert spatial.zorder_encode((-180.0, -90.0)) == 0
    w = 360.0 / 2**32
    h = 180.0 / 2**32
    rng = np.random.default_rng(0)
    for _ in range(200):
        x, y = rng.uniform(-180, 180), rng.uniform(-90, 90)
        p = spatial.zorder_decode(spatial.zorder_encode((x, y)))
        assert 0 <= x - p.x < w + 1e-9 and 0 <= y - p.y < h + 1e-9


@given(st.floats(-180, 179.9), st.floats(-90, 89.9), st.floats(0.0001, 0.1), st.floats(-90, 89.9))
def test_zorder_monotone_per_axis(x, y, dx, fixed):
    assert spatial.zorder_encode((x, fixed)) <= spatial.zorder_encode((min(180, x + dx), fixed))
    assert spatial.zorder_encode((fixed, y)) <= spatial.zorder_encode((fixed, min(90, y + dx)))


def _point_table(db, n=1000, seed=0, segments=1, lo=0.0, hi=10.0):
    t = db.create_table(_schema(Column("p", "geometry"), idx=(IndexSpec("p", "spatial"),)))
    rng = np.random.default_rng(seed)
    per = n // segments
    for s in range(segments):
        t.put_many({"id": s * per + i, "p": [rng.uniform(lo, hi), rng.uniform(lo, hi)]} for i in range(per))
        t.flush_memtable()
    return t


def test_range_left_half(tmp_path):
    with _db(tmp_path) as db:
        t = _point_table(db)
        seg = t.segments[0]
        got = {h.key for h in spatial.range_filter(seg, seg.index_regions["p"], Rect(0, 0, 5, 10))}
        assert got == {r.key for r in t.scan() if r.attrs["p"].x <= 5}


def test_degenerate_rect_hits_stored_point(tmp_path):
    with _db(tmp_path) as db:
        t = _point_table(db, n=100)
        r = next(iter(t.scan()))
        seg = t.segments[0]
        p = r.attrs["p"]
        hits = spatial.range_filter(seg, seg.index_regions["p"], Rect(p.x, p.y, p.x, p.y))
        assert [h.key for h in hits] == [r.key]


def test_range_exactness_rect_and_polygon(tmp_path):
    with _db(tmp_path) as db:
        t = _point_table(db, n=10_000, seed=1)
        seg = t.segments[0]
        rows = list(t.scan())
        keys = np.array([r.key for r in rows])
        px = np.array([r.attrs["p"].x for r in rows])
        py = np.array([r.attrs["p"].y for r in rows])
        rng = np.random.default_rng(2)
        for i in range(500):
            x, y = rng.uniform(-1, 10, 2)
            w, h = rng.uniform(0.01, 4, 2)
            if i % 2:
                region = Rect(x, y, x + w, y + h)
                inside = (px >= x) & (px <= x + w) & (py >= y) & (py <= y + h)
            else:
                tri = np.array([(x, y), (x + w, y), (x + w / 2, y + h)])
                region = Polygon(tuple(map(tuple, tri)))
                # counter-clockwise triangle: inside iff left of (or on) every edge
                inside = np.ones(len(px), dtype=bool)
                for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                    inside &= (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]) >= 0
            got = {hh.key for hh in spatial.range_filter(seg, seg.index_regions["p"], region)}
            assert got == set(keys[inside].tolist())


def test_disjoint_query_never_opens_segment(tmp_path):
    from mmdb.query.executor import choose_and_execute
    from mmdb.query.spec import QuerySpec, SpatialContains

    with _db(tmp_path) as db:
        t = _point_table(db, n=200, lo=0, hi=1)
        t.put_many({"id": 10_000 + i, "p": [50 + i * 0.01, 50]} for i in range(50))
        t.flush_memtable()
        far = t.segments[-1]  # oldest: the points near the origin
        db.cache.clear()
        choose_and_execute(t, QuerySpec("t", (SpatialContains("p", Rect(40, 40, 60, 60)),)))
        assert db.io.reads_by_segment[far.uid] == 0


def test_distance_iterator_exact(tmp_path):
    with _db(tmp_path) as db:
        t = _point_table(db, n=1500, seed=3, segments=3)
        pts = {r.key: r.attrs["p"] for r in t.scan()}
        rng = np.random.default_rng(4)
        for _ in range(5):
            q = Point(*rng.uniform(-2, 12, 2))
            with t.snapshot() as snap:
                seq = list(term_iterator(SnapshotReader(t, snap), RankTerm("spatial", "p", q), None))
            ref = sorted((math.hypot(p.x - q.x, p.y - q.y), k) for k, p in pts.items())
            assert len(seq) == len(pts)
            assert seq[0].key == ref[0][1]
            assert [h.key for h in seq] == [k for _, k in ref]
        stored = next(iter(pts.values()))
        with t.snapshot() as snap:
            first = term_iterator(SnapshotReader(t, snap), RankTerm("spatial", "p", stored), None).next()
        assert first.distance == 0.0


# -- text ------------------------------------------------------------------------------------


def test_tokenize_rules():
    assert text.tokenize("Hello, World!") == ("hello", "world")
    assert text.tokenize("") == ()
    assert text.tokenize("NYC @tweet #NYC") == ("nyc", "tweet", "nyc")


@given(st.floats(0, 1e6), st.floats(1e-6, 1e6))
def test_score_to_distance_strictly_decreasing(a, gap):
    # gaps below float resolution of 1 / (1 + s) are not representable
    b = a + gap * (1.0 + a)
    assert text.score_to_distance(a) > text.score_to_distance(b)


def _text_table(db, docs, segments=1):
    t = db.create_table(_schema(Column("c", "text"), idx=(IndexSpec("c", "inverted"),)))
    per = math.ceil(len(docs) / segments)
    for s in range(segments):
        t.put_many({"id": s * per + i, "c": d} for i, d in enumerate(docs[s * per:(s + 1) * per]))
        t.flush_memtable()
    return t


def test_keyword_filter_small(tmp_path):
    with _db(tmp_path) as db:
        t = _text_table(db, ["calm day", "storm warning", "sunny"])
        seg = t.segments[0]
        assert [h.key for h in text.keyword_filter(seg, seg.index_regions["c"], "storm")] == [1]


def test_keyword_filter_random_trials(tmp_path):
    rng = np.random.default_rng(0)
    vocab = [f"w{i}" for i in range(40)]
    for trial in range(500):
        docs = [" ".join(rng.choice(vocab, int(rng.integers(0, 6)))) for _ in range(int(rng.integers(1, 30)))]
        if trial % 50 == 0:
            db = _db(tmp_path / f"d{trial}")
        t = db.create_table(TableSchema(f"t{trial}", (Column("id", "int64"), Column("c", "text")), "id",
                                        (IndexSpec("c", "inverted"),)))
        t.put_many({"id": i, "c": d} for i, d in enumerate(docs))
        seg = t.flush_memtable()
        term = str(rng.choice(vocab))
        got = {h.key for h in text.keyword_filter(seg, seg.index_regions["c"], term)} if seg else set()
        assert got == {i for i, d in enumerate(docs) if term in text.tokenize(d)}
        if trial % 50 == 49:
            db.close()


def test_absent_term_pruned_by_bloom(tmp_path):
    rng = np.random.default_rng(1)
    with _db(tmp_path) as db:
        t = _text_table(db, [" ".join(f"w{j}" for j in rng.integers(0, 500, 8)) for _ in range(3000)], segments=10)
        pruned = total = 0
        for i in range(1000):
            term = f"absent{i}"
            ids = {e.segment_id for e in t.global_index.prune("c", term)}
            pruned += len(t.segments) - len(ids)
            total += len(t.segments)
            for seg in t.segments:
                assert text.keyword_filter(seg, seg.index_regions["c"], term) == []
        assert pruned / total >= 0.99


def test_conjunction_intersection(tmp_path):
    rng = np.random.default_rng(2)
    docs = [" ".join(rng.choice(["a1", "b2", "c3", "d4", "e5"], 3)) for _ in range(300)]
    with _db(tmp_path) as db:
        t = _text_table(db, docs)
        seg = t.segments[0]
        a = CandidateSet.from_hits(text.keyword_filter(seg, seg.index_regions["c"], "a1"))
        b = CandidateSet.from_hits(text.keyword_filter(seg, seg.index_regions["c"], "c3"))
        assert (a & b).keys() == {i for i, d in enumerate(docs) if {"a1", "c3"} <= set(text.tokenize(d))}


def _brute_scores(docs, terms):
    n = sum(1 for d in docs if d is not None)
    toks = [Counter(text.tokenize(d)) for d in docs]
    df = {t: sum(1 for c in toks if t in c) for t in terms}
    out = {}
    for i, c in enumerate(toks):
        s = sum(c[t] * math.log(1 + n / df[t]) for t in terms if c.get(t))
        if s > 0:
            out[i] = 1.0 / (1.0 + s)
    return out


def test_relevance_iterator_matches_brute_force(tmp_path):
    rng = np.random.default_rng(3)
    docs = [" ".join(rng.choice(["red", "blue", "green", "gold", "gray"], int(rng.integers(1, 6)))) for _ in range(400)]
    with _db(tmp_path) as db:
        t = _text_table(db, docs)
        seg = t.segments[0]
        terms = ["red", "gold"]
        seq = [(h.distance, h.key) for h in text.score_segment(seg, seg.index_regions["c"], terms)]
        ref = sorted((d, k) for k, d in _brute_scores(docs, terms).items())
        assert [k for _, k in seq] == [k for _, k in ref]
        assert np.allclose([d for d, _ in seq], [d for d, _ in ref])
        assert [d for d, _ in seq] == sorted(d for d, _ in seq)
        assert text.score_segment(seg, seg.index_regions["c"], ["nothing"]) == []


def test_tf_monotone(tmp_path):
    with _db(tmp_path) as db:
        t = _text_table(db, ["rain", "rain rain", "sun"])
        seg = t.segments[0]
        assert [h.key for h in text.score_segment(seg, seg.index_regions["c"], ["rain"])] == [1, 0]


def test_df_tf_conservation(tmp_path):
    rng = np.random.default_rng(4)
    docs = [" ".join(rng.choice(["x1", "y2", "z3"], int(rng.integers(0, 5)))) for _ in range(200)]
    with _db(tmp_path) as db:
        t = _text_table(db, docs)
        seg = t.segments[0]
        root = text.read_root(seg, seg.index_regions["c"])
        for term in ("x1", "y2", "z3"):
            ph, df = text.lookup_term(seg, root, term)
            cols = text.read_posting(seg, ph)
            assert int(np.sum(cols["tf"])) == sum(text.tokenize(d).count(term) for d in docs)
            assert df == sum(1 for d in docs if term in text.tokenize(d))
