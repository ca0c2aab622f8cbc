import io
import json
import subprocess
import sys

import numpy as np
import pytest

from mmdb.cli import dispatch

SCHEMA = {"table_name": "docs", "primary_key": "id",
          "columns": [{"name": "id", "kind": "int64"}, {"name": "a", "kind": "int64"}, {"name": "b", "kind": "int64"},
                      {"name": "loc", "kind": "geometry"}, {"name": "txt", "kind": "text"},
                      {"name": "v", "kind": "vector", "dim": 4}],
          "indexes": [{"column": "a", "kind": "btree"}, {"column": "b", "kind": "btree"},
                      {"column": "loc", "kind": "spatial"}, {"column": "txt", "kind": "inverted"},
                      {"column": "v", "kind": "ivf", "params": {"n_centroids": 4}}]}
WORDS = ("red", "green", "blue", "storm", "calm")


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = dispatch([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(0)
    (tmp_path / "schema.json").write_text(json.dumps(SCHEMA))
    with open(tmp_path / "rows.ndjson", "w") as f:
        for i in range(6000):
            f.write(json.dumps({"id": i, "a": int(rng.integers(0, 1000)), "b": int(rng.integers(0, 1000)),
                                "loc": {"point": [float(rng.uniform(0, 10)), float(rng.uniform(0, 10))]},
                                "txt": " ".join(rng.choice(WORDS, 3)), "v": rng.normal(size=4).round(4).tolist()})
                    + "\n")
    (tmp_path / "nn.json").write_text(json.dumps({
        "table": "docs", "select": ["id", "txt"],
        "filters": [{"kind": "keyword", "column": "txt", "term": "storm"}],
        "rank": {"terms": [{"modality": "vector", "column": "v", "query": [0.1, 0.2, 0.3, 0.4], "weight": 1.0},
                           {"modality": "spatial", "column": "loc", "query": [5, 5], "weight": 0.2}], "k": 7}}))
    return tmp_path


def _setup(files, data_dir):
    assert run("--data-dir", data_dir, "init", files / "schema.json")[0] == 0
    code, out, _ = run("--data-dir", data_dir, "load", files / "rows.ndjson")
    assert code == 0 and out.strip() == "loaded 6000 rows into docs"


def test_round_trip_output_is_byte_identical(files):
    outputs = []
    for run_id in range(2):
        d = files / f"db{run_id}"
        _setup(files, d)
        code, out, _ = run("--data-dir", d, "--cache-mb", 0, "query", files / "nn.json")
        assert code == 0
        outputs.append(out)
    assert outputs[0] == outputs[1]
    lines = outputs[0].splitlines()
    assert len(lines) == 7
    cells = lines[0].split("\t")
    assert len(cells) == 2 + 2 + 1  # id, txt, two distances, score
    assert "storm" in cells[1]
    scores = [float(line.split("\t")[-1]) for line in lines]
    assert scores == sorted(scores)


def test_explain_names_intersect(tmp_path):
    schema = {"table_name": "pairs", "primary_key": "id",
              "columns": [{"name": "id", "kind": "int64"}, {"name": "a", "kind": "int64"},
                          {"name": "b", "kind": "int64"}, {"name": "pad", "kind": "string"}],
              "indexes": [{"column": "a", "kind": "btree"}, {"column": "b", "kind": "btree"}]}
    (tmp_path / "schema.json").write_text(json.dumps(schema))
    rng = np.random.default_rng(0)
    with open(tmp_path / "rows.ndjson", "w") as f:
        for i in range(20_000):
            f.write(json.dumps({"id": i, "a": int(rng.integers(0, 1000)), "b": int(rng.integers(0, 1000)),
                                "pad": "p" * 100}) + "\n")
    d = tmp_path / "db"
    assert run("--data-dir", d, "init", tmp_path / "schema.json")[0] == 0
    assert run("--data-dir", d, "load", tmp_path / "rows.ndjson")[0] == 0
    q = json.dumps({"table": "pairs", "filters": [{"kind": "scalar_range", "column": "a", "lo": 0, "hi": 9},
                                                  {"kind": "scalar_range", "column": "b", "lo": 0, "hi": 9}]})
    code, out, _ = run("--data-dir", d, "--cache-mb", 0, "query", q, "--explain")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("IndexIntersect[a:scalar_range+b:scalar_range]")
    assert "est_rows=" in lines[0] and "actual_rows=" in lines[0] and "actual_block_reads=" in lines[0]
    assert lines[1].strip().startswith("IndexFilter[a:scalar_range]")  # the legs are listed beneath
    assert "alternatives:" in out and "  FullScan cost=" in out
    assert lines[-1].startswith("rows=")


def test_force_plan_and_n_probe(files):
    d = files / "db"
    _setup(files, d)
    a = run("--data-dir", d, "query", files / "nn.json")[1]
    b = run("--data-dir", d, "query", files / "nn.json", "--force-plan", "TopKSort(FullScan)")[1]
    c = run("--data-dir", d, "query", files / "nn.json", "--n-probe", 4)[1]
    assert a == b == c


def test_unknown_subcommand_is_usage_error(files):
    code, out, err = run("frobnicate")
    assert code == 1 and "usage" in err.lower() and out == ""
    assert run()[0] == 1
    assert run("query")[0] == 1


def test_runtime_errors_exit_two(files):
    d = files / "db"
    _setup(files, d)
    code, _, err = run("--data-dir", d, "query", '{"table": "nope", "filters": [{"kind": "keyword", "column": '
                                                 '"txt", "term": "x"}]}')
    assert code == 2 and err.startswith("error:")
    assert run("--data-dir", d, "query", files / "missing.json")[0] == 2
    assert run("--data-dir", d, "query", "{not json")[0] == 2
    assert run("--data-dir", d, "views", "drop", 42)[0] == 2


def test_views_list_empty(files):
    d = files / "db"
    _setup(files, d)
    code, out, _ = run("--data-dir", d, "views", "list")
    assert code == 0
    assert out.splitlines() == ["id\tflavor\ttable\tcolumn\tbytes\trows\twatermark\thits\tstate"]


def test_register_list_drop(files):
    d = files / "db"
    _setup(files, d)
    q = json.dumps({"table": "docs", "filters": [{"kind": "spatial_contains", "column": "loc",
                                                  "region": {"rect": [1, 1, 3, 3]}}],
                    "mode": {"sync_seconds": 1}})
    code, out, _ = run("--data-dir", d, "register", q)
    assert code == 0 and out.strip() == "registered query 1"
    code, out, _ = run("--data-dir", d, "views", "list")
    rows = out.splitlines()[1:]
    assert code == 0 and len(rows) == 1 and rows[0].split("\t")[1] == "spatial_range"
    snapshot_only = json.dumps({"table": "docs", "filters": [{"kind": "keyword", "column": "txt", "term": "red"}]})
    assert run("--data-dir", d, "register", snapshot_only)[0] == 2
    assert run("--data-dir", d, "views", "drop", 1)[0] == 0
    assert run("--data-dir", d, "views", "list")[1].count("\n") == 1


def test_register_follow_prints_executions(files):
    d = files / "db"
    _setup(files, d)
    q = json.dumps({"table": "docs", "filters": [{"kind": "spatial_contains", "column": "loc",
                                                  "region": {"rect": [1, 1, 3, 3]}}],
                    "mode": {"sync_seconds": 0.5}})
    code, out, _ = run("--data-dir", d, "register", q, "--follow", "--duration", 1.6)
    assert code == 0
    execs = [line for line in out.splitlines() if line.startswith("query=1 ")]
    assert 2 <= len(execs) <= 4
    assert len({line.split("digest=")[1] for line in execs}) == 1


def test_stats(files):
    d = files / "db"
    _setup(files, d)
    code, out, _ = run("--data-dir", d, "stats")
    lines = out.splitlines()
    assert code == 0 and lines[1].split("\t")[:2] == ["docs", "6000"]
    assert lines[-1].startswith("physical_reads ")


def test_bench_command(tmp_path):
    cfg = {"tweets": 2000, "pois": 100, "cities": 10, "dim": 16, "n_centroids": 8, "ops": 40, "query_workers": 1}
    (tmp_path / "bench.json").write_text(json.dumps(cfg))
    code, out, _ = run("--data-dir", tmp_path / "b", "bench", tmp_path / "bench.json")
    assert code == 0
    assert "ops 40 count" in out.splitlines() and "reads 36 count" in out.splitlines()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mmdb.cli", "--data-dir", str(tmp_path / "x"), "stats"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("table\trows")
    proc = subprocess.run([sys.executable, "-m", "mmdb.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr.lower()
