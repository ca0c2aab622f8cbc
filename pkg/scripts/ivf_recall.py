"""IVF recall@10 as a function of n_probe on planted clusters."""

import argparse
import tempfile

import numpy as np

from mmdb import Column, Database, IndexSpec, TableConfig, TableSchema
from mmdb.index import ivf


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=100_000)
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--cells", type=int, default=16)
    ap.add_argument("--clusters", type=int, default=32)
    ap.add_argument("--spread", type=float, default=0.35, help="cluster center scale relative to unit noise")
    ap.add_argument("--queries", type=int, default=50)
    args = ap.parse_args()
    rng = np.random.default_rng(3)
    centers = rng.normal(size=(args.clusters, args.dim)) * args.spread
    vecs = (centers[rng.integers(0, args.clusters, args.rows)] + rng.normal(size=(args.rows, args.dim))).astype(np.float32)
    schema = TableSchema("v", (Column("id", "int64"), Column("e", "vector", args.dim)), "id",
                         (IndexSpec("e", "ivf", {"n_centroids": args.cells}),))
    with tempfile.TemporaryDirectory() as d, Database(d, config=TableConfig(
            background=False, auto_compact=False, flush_threshold_bytes=1 << 30)) as db:
        t = db.create_table(schema)
        t.put_many({"id": i, "e": vecs[i]} for i in range(args.rows))
        seg = t.flush_memtable()
        qs = centers[rng.integers(0, args.clusters, args.queries)] + rng.normal(size=(args.queries, args.dim))
        base = vecs.astype(np.float64)
        truth = [set(np.argsort(np.linalg.norm(base - q, axis=1))[:10].tolist()) for q in qs]
        n_probe = 1
        while n_probe <= args.cells:
            rec = [len({h.key for h in ivf.search_segment(seg, seg.index_regions["e"], q, n_probe, 10)} & tr) / 10
                   for q, tr in zip(qs, truth)]
            print(f"n_probe={n_probe} recall@10={np.mean(rec):.3f}")
            n_probe *= 2


if __name__ == "__main__":
    main()
