"""Command-line front door: tables, ingest, queries, continuous queries and benchmarks."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import signal
import sys
import threading
import time

import numpy as np

from mmdb.errors import MmdbError, QueryError
from mmdb.query.executor import choose_and_execute
from mmdb.query.spec import QuerySpec
from mmdb.storage import Database, TableConfig
from mmdb.types import Point, Polygon, Rect, TableSchema, geometry_to_obj

REGISTRY = "continuous.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmdb", description="Embedded multimodal LSM database.")
    p.add_argument("--data-dir", default="./mmdb-data", help="database directory")
    p.add_argument("--cache-mb", type=int, default=512, help="block cache size in MiB")
    p.add_argument("--seed", type=int, default=0, help="seed for index training and benchmarks")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("init", help="create tables from a schema document")
    s.add_argument("schema", help="JSON file holding one schema or a list of schemas")

    s = sub.add_parser("load", help="ingest newline-delimited JSON records")
    s.add_argument("data", help="NDJSON file, '-' for stdin")
    s.add_argument("--table", help="target table (required when several exist)")

    s = sub.add_parser("query", help="run a snapshot query")
    s.add_argument("dsl", help="query file or inline JSON document")
    s.add_argument("--explain", action="store_true", help="print the plan tree with estimated and actual counters")
    s.add_argument("--force-plan", help="plan label (or prefix) to execute")
    s.add_argument("--n-probe", type=int, help="IVF cells probed per segment")

    s = sub.add_parser("register", help="register a continuous query (sync or async mode)")
    s.add_argument("dsl", help="query file or inline JSON document")
    s.add_argument("--follow", action="store_true", help="serve all registered queries until interrupted")
    s.add_argument("--duration", type=float, help="with --follow: stop after this many seconds")

    s = sub.add_parser("views", help="inspect or drop continuous queries and their views")
    vs = s.add_subparsers(dest="views_command", parser_class=_Parser)
    vs.add_parser("list", help="views selected for the registered queries")
    d = vs.add_parser("drop", help="drop a registered continuous query")
    d.add_argument("query_id", type=int)

    s = sub.add_parser("bench", help="generate the synthetic corpus and run a workload")
    s.add_argument("config", help="JSON workload config")
    s.add_argument("--compare", action="store_true", help="also report forced full scan vs chosen plan")
    s.add_argument("--views", action="store_true", help="serve reads through view matching")

    sub.add_parser("stats", help="table and I/O statistics")
    return p


# -- helpers ---------------------------------------------------------------------------------


def _open(args) -> Database:
    return Database(args.data_dir, cache_bytes=args.cache_mb * 1024 * 1024, config=TableConfig(seed=args.seed))


def _read_doc(arg: str) -> str:
    if arg.lstrip().startswith("{"):
        return arg
    with open(arg) as f:
        return f.read()


def _load_spec(arg: str) -> QuerySpec:
    return QuerySpec.parse(_read_doc(arg))


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (Point, Rect, Polygon)):
        return json.dumps(geometry_to_obj(v), separators=(",", ":"))
    if isinstance(v, np.ndarray):
        return json.dumps([float(x) for x in v.tolist()], separators=(",", ":"))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_row(row, columns) -> str:
    cells = [format_value(row.values.get(c)) for c in columns]
    if row.distances is not None:
        cells += ["inf" if math.isinf(d) else f"{d:.6f}" for d in row.distances]
        cells.append(f"{row.score:.6f}")
    return "\t".join(cells)


def _registry_path(args) -> str:
    return os.path.join(args.data_dir, REGISTRY)


def _read_registry(args) -> list:
    try:
        with open(_registry_path(args)) as f:
            return json.load(f)
    except FileNotFoundError:
        return []


def _write_registry(args, entries: list):
    path = _registry_path(args)
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(entries, f, indent=1, sort_keys=True)
    os.replace(tmp, path)


def _engine_from_registry(db, args, callback=None):
    from mmdb.views import ViewEngine

    engine = ViewEngine(db, seed=args.seed)
    ids = {}
    for entry in _read_registry(args):
        q = engine.register(QuerySpec.from_obj(entry["query"]), callback=callback)
        ids[q.query_id] = entry["id"]
    engine.force_reselect()
    return engine, ids


# -- subcommands ------------------------------------------------------------------------------


def cmd_init(args, out) -> int:
    doc = json.loads(_read_doc(args.schema))
    schemas = doc if isinstance(doc, list) else [doc]
    with _open(args) as db:
        for obj in schemas:
            t = db.create_table(TableSchema.from_obj(obj))
            print(f"created {t.name}", file=out)
    return 0


def cmd_load(args, out) -> int:
    db = _open(args)
    try:
        if args.table:
            table = db.table(args.table)
        elif len(db.tables) == 1:
            table = next(iter(db.tables.values()))
        else:
            raise QueryError("several tables exist; pass --table")
        f = sys.stdin if args.data == "-" else open(args.data)
        n = 0
        batch = []
        try:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    batch.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise QueryError(f"line {lineno}: {exc}") from exc
                if len(batch) >= 4096:
                    table.put_many(batch)
                    n += len(batch)
                    batch = []
            if batch:
                table.put_many(batch)
                n += len(batch)
        finally:
            if f is not sys.stdin:
                f.close()
        print(f"loaded {n} rows into {table.name}", file=out)
    finally:
        db.close(flush=True)
    return 0


def cmd_query(args, out) -> int:
    spec = _load_spec(args.dsl)
    opts = {}
    if args.force_plan:
        opts["force_plan"] = args.force_plan
    if args.n_probe is not None:
        opts["n_probe"] = args.n_probe
    if opts:
        spec = spec.with_options(**opts)
    with _open(args) as db:
        table = db.table(spec.table)
        res = choose_and_execute(table, spec)
        columns = spec.projection or tuple(c.name for c in table.schema.columns)
        if args.explain:
            print(res.explain(), file=out)
            print("alternatives:", file=out)
            for p in sorted(res.plans, key=lambda p: (p.estimated_cost, p.label)):
                print(f"  {p.label} cost={p.estimated_cost:.3f} est_rows={p.estimated_rows:.1f}", file=out)
            print(f"rows={len(res.rows)} block_reads={res.block_reads} exact={res.exact}", file=out)
        else:
            for row in res.rows:
                print(format_row(row, columns), file=out)
    return 0


def cmd_register(args, out) -> int:
    spec = _load_spec(args.dsl)
    if spec.mode.kind not in ("sync", "async"):
        raise QueryError("register needs a query with mode sync_seconds or async")
    entries = _read_registry(args)
    with _open(args) as db:
        spec.validate(db.table(spec.table).schema)
    qid = max((e["id"] for e in entries), default=0) + 1
    entries.append({"id": qid, "query": spec.to_obj()})
    _write_registry(args, entries)
    print(f"registered query {qid}", file=out)
    if args.follow:
        return _serve(args, out)
    return 0


def _serve(args, out) -> int:
    db = _open(args)
    lock = threading.Lock()
    ids: dict = {}

    def on_result(q, res):
        with lock:
            print(f"query={ids.get(q.query_id, q.query_id)} mode={q.mode.kind} rows={len(res.rows)} "
                  f"plan={res.plan.label} digest={hashlib.sha1(q.last_digest.encode()).hexdigest()[:12]}", file=out, flush=True)

    engine, mapping = _engine_from_registry(db, args, callback=on_result)
    ids.update(mapping)
    stop = threading.Event()
    prev = signal.signal(signal.SIGINT, lambda *_: stop.set())
    try:
        engine.start()
        stop.wait(args.duration)
    finally:
        signal.signal(signal.SIGINT, prev)
        engine.close()
        db.close(flush=True)
    return 0


def cmd_views(args, out) -> int:
    if args.views_command == "drop":
        entries = _read_registry(args)
        keep = [e for e in entries if e["id"] != args.query_id]
        if len(keep) == len(entries):
            raise QueryError(f"no registered query {args.query_id}")
        _write_registry(args, keep)
        print(f"dropped query {args.query_id}", file=out)
        return 0
    if args.views_command != "list":
        raise UsageError("usage: mmdb views {list,drop}")
    with _open(args) as db:
        engine, _ = _engine_from_registry(db, args)
        try:
            print("id\tflavor\ttable\tcolumn\tbytes\trows\twatermark\thits\tstate", file=out)
            for v in engine.list_views():
                print("\t".join(str(v[c]) for c in ("id", "flavor", "table", "column", "bytes", "rows",
                                                    "watermark", "hits", "state")), file=out)
        finally:
            engine.close()
    return 0


def cmd_bench(args, out) -> int:
    from mmdb.bench import DatasetContext, WorkloadConfig, generate_dataset, run_workload
    from mmdb.bench.dataset import preload_counts
    from mmdb.bench.workload import compare_plans_report, format_compare

    obj = json.loads(_read_doc(args.config))
    obj.setdefault("seed", args.seed)
    cfg = WorkloadConfig.from_obj(obj)
    db = Database(args.data_dir, cache_bytes=args.cache_mb * 1024 * 1024, config=cfg.table_config())
    engine = None
    try:
        if "tweets" in db:
            ctx = DatasetContext.create(cfg)
            ctx.loaded = preload_counts(cfg)
        else:
            t0 = time.perf_counter()
            ctx = generate_dataset(db, cfg)
            db.table("tweets").wait_idle()
            print(f"loaded {ctx.loaded['tweets']} tweets in {time.perf_counter() - t0:.1f} s", file=out)
        if args.views:
            from mmdb.views import ViewEngine

            engine = ViewEngine(db, seed=cfg.seed)
        report = run_workload(db, ctx, engine=engine)
        print(report.table(), file=out)
        for line in report.lines():
            print(line, file=out)
        if args.compare:
            print(format_compare(compare_plans_report(db, ctx)), file=out)
    finally:
        if engine is not None:
            engine.close()
        db.close(flush=True)
    return 0


def cmd_stats(args, out) -> int:
    with _open(args) as db:
        print("table\trows\tsegments\tmemtable_bytes\tseqno\tflushes\tcompactions", file=out)
        for name in sorted(db.tables):
            t = db.table(name)
            m = t.metrics
            print(f"{name}\t{len(t)}\t{len(t.segments)}\t{t.memtable_bytes}\t{t.seqno}\t{m.flushes}\t"
                  f"{m.compactions}", file=out)
        print(f"physical_reads {db.io.physical_reads}", file=out)
    return 0


COMMANDS = {"init": cmd_init, "load": cmd_load, "query": cmd_query, "register": cmd_register,
            "views": cmd_views, "bench": cmd_bench, "stats": cmd_stats}


def dispatch(argv: list[str], out=None, err=None) -> int:
    """Run one command; 0 on success, 1 on usage errors, 2 on runtime errors."""
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip())
        if args.command == "views" and args.views_command is None:
            raise UsageError("usage: mmdb views {list,drop}")
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(str(exc).rstrip(), file=err)
        return 1
    except (MmdbError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=err)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
