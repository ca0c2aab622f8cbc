"""Continuous-query latency with and without materialized views."""

import argparse
import math
import tempfile
import time

import numpy as np

from mmdb import Column, Database, IndexSpec, TableConfig, TableSchema
from mmdb.query.executor import choose_and_execute
from mmdb.query.spec import Mode, QuerySpec, SpatialContains
from mmdb.views import ViewEngine


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--hotspots", type=int, default=10)
    ap.add_argument("--per-hotspot", type=int, default=10)
    ap.add_argument("--budget-mb", type=float, default=150)
    ap.add_argument("--rounds", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    schema = TableSchema("p", (Column("id", "int64"), Column("loc", "geometry"), Column("n", "int64"),
                               Column("s", "string")), "id", (IndexSpec("loc", "spatial"),))
    with tempfile.TemporaryDirectory() as d, Database(d, config=TableConfig(flush_threshold_bytes=4 << 20)) as db:
        t = db.create_table(schema)
        xy = rng.uniform(0, 100, (args.rows, 2))
        t.put_many({"id": i, "loc": {"point": [float(x), float(y)]}, "n": i % 97, "s": "row%07d" % i}
                   for i, (x, y) in enumerate(xy))
        t.wait_idle(600)
        density = args.rows / 1e4
        specs = []
        for hot in rng.uniform(15, 85, (args.hotspots, 2)):
            for _ in range(args.per_hotspot):
                side = math.sqrt(rng.uniform(1100, 1900) / density)
                x, y = hot + rng.uniform(-2, 2, 2)
                specs.append(QuerySpec("p", (SpatialContains("loc", {"rect": [x - side / 2, y - side / 2,
                                                                              x + side / 2, y + side / 2]}),),
                                       mode=Mode("sync", 1.0)))
        budget = int(args.budget_mb * 1e6)
        with ViewEngine(db, budget_bytes=budget) as e:
            qs = [e.register(s) for s in specs]
            views = e.force_reselect()
            print(f"views={len(views)} view_bytes={e.catalog.total_bytes} linked={sum(bool(q.linked_views) for q in qs)}")
            on, off = [], []
            for _ in range(args.rounds):
                for _ in range(200):
                    t.put({"id": int(rng.integers(0, args.rows)), "loc": {"point": rng.uniform(0, 100, 2).tolist()},
                           "n": 1, "s": "u"})
                for q in qs:
                    a = time.perf_counter()
                    choose_and_execute(t, q.spec.with_options(use_views=False))
                    off.append(time.perf_counter() - a)
                    a = time.perf_counter()
                    e.run_query(q)
                    on.append(time.perf_counter() - a)
        print(f"mean_ms_with_views={np.mean(on) * 1e3:.2f} mean_ms_without={np.mean(off) * 1e3:.2f} "
              f"ratio={np.mean(on) / np.mean(off):.3f}")


if __name__ == "__main__":
    main()
