"""Interleaved read/write workloads and their metrics."""

from __future__ import annotations

import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mmdb.bench.dataset import DatasetContext, WorkloadConfig
from mmdb.bench.templates import BY_ID, HYBRID_NN, templates_for_mix
from mmdb.query.executor import choose_and_execute


@dataclass(frozen=True)
class Op:
    kind: str  # read | write
    template_id: int | None = None
    spec: object = None
    row: dict | None = None


def is_write(i: int, reads: int, writes: int) -> bool:
    """Deterministic interleaving: op ``i`` is a write exactly ``writes`` times per ``reads + writes`` ops."""
    total = reads + writes
    return (i + 1) * writes // total > i * writes // total


def operation_sequence(ctx: DatasetContext, n_ops: int) -> list[Op]:
    """The workload's operations, fully determined by the seed."""
    cfg = ctx.config
    rng = np.random.default_rng([cfg.seed, 7])
    mix = templates_for_mix(cfg.template_mix)
    order = [mix[i] for i in rng.permutation(len(mix))]
    next_tweet = ctx.loaded.get("tweets", 0)
    ops = []
    n_reads = 0
    for i in range(n_ops):
        if is_write(i, cfg.read_ratio, cfg.write_ratio):
            ops.append(Op("write", row=ctx.tweets(next_tweet, next_tweet + 1)[0]))
            next_tweet += 1
        else:
            t = order[n_reads % len(order)]
            ops.append(Op("read", t.template_id, t.instantiate(ctx, rng)))
            n_reads += 1
    return ops


def _pct(values, q) -> float:
    return float(np.percentile(values, q)) if values else 0.0


@dataclass
class MetricsReport:
    ops: int = 0
    reads: int = 0
    writes: int = 0
    errors: int = 0
    elapsed: float = 0.0
    write_seconds: float = 0.0
    latencies: dict = field(default_factory=dict)  # kind -> [seconds]
    template_latencies: dict = field(default_factory=dict)  # template id -> [seconds]
    block_reads: int = 0
    plans: Counter = field(default_factory=Counter)
    view_hits: int = 0

    def summary(self, kind: str) -> dict:
        lat = self.latencies.get(kind, [])
        return {"count": len(lat), "mean": float(np.mean(lat)) if lat else 0.0, "p50": _pct(lat, 50),
                "p95": _pct(lat, 95)}

    @property
    def ingest_throughput(self) -> float:
        return self.writes / self.write_seconds if self.write_seconds > 0 else 0.0

    @property
    def view_hit_rate(self) -> float:
        return self.view_hits / self.reads if self.reads else 0.0

    def lines(self) -> list[str]:
        """Machine-readable report: one ``name value unit`` metric per line."""
        out = [f"ops {self.ops} count", f"reads {self.reads} count", f"writes {self.writes} count",
               f"errors {self.errors} count", f"elapsed {self.elapsed:.6f} s",
               f"ingest_throughput {self.ingest_throughput:.3f} rows/s",
               f"block_reads {self.block_reads} blocks", f"view_hit_rate {self.view_hit_rate:.4f} ratio"]
        for kind in sorted(self.latencies):
            s = self.summary(kind)
            out.append(f"{kind}.count {s['count']} count")
            for m in ("mean", "p50", "p95"):
                out.append(f"{kind}.latency_{m} {s[m] * 1000:.3f} ms")
        for tid in sorted(self.template_latencies):
            lat = self.template_latencies[tid]
            out.append(f"template{tid}.latency_mean {float(np.mean(lat)) * 1000:.3f} ms")
        for label, n in sorted(self.plans.items()):
            out.append(f"plan[{label}] {n} count")
        return out

    def table(self) -> str:
        rows = [f"{'kind':<15}{'count':>8}{'mean ms':>12}{'p50 ms':>12}{'p95 ms':>12}"]
        for kind in sorted(self.latencies):
            s = self.summary(kind)
            rows.append(f"{kind:<15}{s['count']:>8}{s['mean'] * 1000:>12.3f}{s['p50'] * 1000:>12.3f}"
                        f"{s['p95'] * 1000:>12.3f}")
        rows.append(f"ingest throughput: {self.ingest_throughput:.1f} rows/s; block reads: {self.block_reads}; "
                    f"view hit rate: {self.view_hit_rate:.3f}; errors: {self.errors}")
        return "\n".join(rows)


def run_workload(db, ctx: DatasetContext, n_ops: int | None = None, engine=None) -> MetricsReport:
    """Issue the deterministic op stream: writes in order on this thread, reads on the query workers.

    ``engine`` (a view engine) serves reads through view matching when given.
    Per-operation errors are counted and the run continues.
    """
    cfg = ctx.config
    tweets = db.table("tweets")
    report = MetricsReport()
    deadline = None if cfg.duration is None else time.perf_counter() + cfg.duration
    ops = operation_sequence(ctx, n_ops if n_ops is not None else cfg.ops)
    io = db.io
    before = io.physical_reads

    def read(op: Op):
        t0 = time.perf_counter()
        res = engine.execute(op.spec) if engine is not None else choose_and_execute(tweets, op.spec)
        return op, time.perf_counter() - t0, res

    def record(op, lat, res):
        kind = BY_ID[op.template_id].kind
        report.latencies.setdefault(kind, []).append(lat)
        report.template_latencies.setdefault(op.template_id, []).append(lat)
        report.plans[res.plan.label] += 1
        if res.plan.kind == "ViewScan":
            report.view_hits += 1

    t_start = time.perf_counter()
    workers = max(1, cfg.query_workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = []
        for op in ops:
            if deadline is not None and time.perf_counter() > deadline:
                break
            report.ops += 1
            if op.kind == "write":
                t0 = time.perf_counter()
                try:
                    tweets.put(op.row)
                    report.writes += 1
                except Exception:
                    report.errors += 1
                report.write_seconds += time.perf_counter() - t0
            else:
                report.reads += 1
                if workers > 1:
                    futures.append(pool.submit(read, op))
                    continue
                try:
                    record(*read(op))
                except Exception:
                    report.errors += 1
        for f in futures:
            try:
                record(*f.result())
            except Exception:
                report.errors += 1
    report.elapsed = time.perf_counter() - t_start
    report.block_reads = io.physical_reads - before
    return report


def compare_plans_report(db, ctx: DatasetContext, per_template: int = 3, template_ids=None) -> list[dict]:
    """Per template: mean latency of a forced full scan vs the optimizer's choice, with speedup."""
    tweets = db.table("tweets")
    rng = np.random.default_rng([ctx.config.seed, 11])
    ids = template_ids or sorted(BY_ID)
    out = []
    for tid in ids:
        t = BY_ID[tid]
        specs = [t.instantiate(ctx, rng) for _ in range(per_template)]
        scan_label = "TopKSort(FullScan)" if t.kind == HYBRID_NN else "FullScan"
        timings = {}
        chosen_labels = Counter()
        for name, force in (("scan", scan_label), ("chosen", None)):
            lat = []
            for spec in specs:
                s = spec.with_options(force_plan=force)
                t0 = time.perf_counter()
                res = choose_and_execute(tweets, s)
                lat.append(time.perf_counter() - t0)
                if force is None:
                    chosen_labels[res.plan.label] += 1
            timings[name] = float(np.mean(lat))
        speedup = timings["scan"] / timings["chosen"] if timings["chosen"] > 0 else 0.0
        top = chosen_labels.most_common(1)[0][0]
        out.append({"template": tid, "plan": "scan", "label": scan_label, "latency": timings["scan"],
                    "speedup": speedup})
        out.append({"template": tid, "plan": "chosen", "label": top, "latency": timings["chosen"],
                    "speedup": speedup})
    return out


def format_compare(rows: list[dict]) -> str:
    lines = [f"{'template':>8} {'plan':<7} {'latency ms':>11} {'speedup':>8}  label"]
    for r in rows:
        lines.append(f"{r['template']:>8} {r['plan']:<7} {r['latency'] * 1000:>11.3f} {r['speedup']:>8.2f}  {r['label']}")
    return "\n".join(lines)
