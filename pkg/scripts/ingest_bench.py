"""Ingest throughput with and without ivf+spatial+inverted indexes."""

import argparse
import tempfile
import time

from mmdb import Database, TableConfig
from mmdb.bench.dataset import DatasetContext, WorkloadConfig, tweet_schema


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=500_000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--batch", type=int, default=1024)
    ap.add_argument("--flush-mb", type=int, default=8)
    args = ap.parse_args()
    rows = DatasetContext.create(WorkloadConfig(tweets=args.rows, dim=args.dim)).tweets(0, args.rows)
    rates = {}
    for indexed in (False, True):
        with tempfile.TemporaryDirectory() as d, \
                Database(d, config=TableConfig(flush_threshold_bytes=args.flush_mb << 20)) as db:
            t = db.create_table(tweet_schema(args.dim, 64, indexed))
            worst = 0.0
            t0 = time.perf_counter()
            for i in range(0, args.rows, args.batch):
                a = time.perf_counter()
                t.put_many(rows[i:i + args.batch])
                worst = max(worst, time.perf_counter() - a)
            put = time.perf_counter() - t0
            t.wait_idle(3600)
            total = time.perf_counter() - t0
            m = t.metrics
            rates[indexed] = args.rows / total
            print(f"indexes={indexed} put_rate={args.rows / put:.0f} end_to_end_rate={rates[indexed]:.0f} "
                  f"worst_batch_s={worst:.3f} stalls={m.stall_count} stall_s={m.stall_seconds:.2f} "
                  f"flushes={m.flushes} compactions={m.compactions}")
    print(f"ratio={rates[True] / rates[False]:.3f}")


if __name__ == "__main__":
    main()
