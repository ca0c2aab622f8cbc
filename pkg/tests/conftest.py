import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmdb import Column, Database, IndexSpec, TableConfig, TableSchema

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture,
                                                                          HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> one-line verdict, filled by test_acceptance.py
ACCEPTANCE: dict = {}
ACCEPTANCE_TITLES = {
    1: "NRA equals brute force", 2: "NRA early termination under skew", 3: "IVF exactness and recall",
    4: "index pruning", 5: "plan equivalence", 6: "multi-index win", 7: "ingestion under indexing",
    8: "LSM correctness", 9: "continuous-view exactness", 10: "view reuse benefit", 11: "knapsack optimality",
    12: "scheduler semantics",
}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in ACCEPTANCE_TITLES.items():
        terminalreporter.write_line(ACCEPTANCE.get(n, f"criterion {n:2d} FAIL  {title}: did not complete"))


WORDS = ("alpha", "beta", "gamma", "delta", "storm", "river", "cloud", "stone")


def mixed_schema(dim: int = 8, n_centroids: int = 8, name: str = "t", indexes: bool = True) -> TableSchema:
    cols = (Column("id", "int64"), Column("v", "vector", dim), Column("loc", "geometry"), Column("txt", "text"),
            Column("n", "int64"), Column("s", "string"))
    idx = (IndexSpec("v", "ivf", {"n_centroids": n_centroids}), IndexSpec("loc", "spatial"),
           IndexSpec("txt", "inverted"), IndexSpec("n", "btree"), IndexSpec("s", "btree")) if indexes else ()
    return TableSchema(name, cols, "id", idx)


def random_row(rng, key: int, dim: int = 8) -> dict:
    return {"id": int(key), "v": rng.normal(size=dim), "loc": {"point": [rng.uniform(-10, 10), rng.uniform(-10, 10)]},
            "txt": " ".join(rng.choice(WORDS, 3)), "n": int(rng.integers(0, 100)), "s": "k%03d" % rng.integers(0, 200)}


def populate(table, n_ops: int, seed: int = 0, key_space: int | None = None, delete_every: int = 7, dim: int = 8):
    """Random puts with interleaved deletes and overwrites."""
    rng = np.random.default_rng(seed)
    key_space = key_space or max(1, int(n_ops * 0.8))
    for i in range(n_ops):
        table.put(random_row(rng, int(rng.integers(0, key_space)), dim))
        if delete_every and i % delete_every == 0:
            table.delete(int(rng.integers(0, key_space)))
    table.wait_idle()
    return table


@pytest.fixture
def db(tmp_path):
    d = Database(str(tmp_path / "db"), config=TableConfig(flush_threshold_bytes=64 * 1024))
    yield d
    d.close()


@pytest.fixture
def mixed_table(db):
    """~2.4k live rows over several segments plus a memtable, with deletes and overwrites."""
    t = db.create_table(mixed_schema())
    populate(t, 3000, seed=0, key_space=2500)
    rng = np.random.default_rng(99)
    for i in range(40):  # rows still in the memtable
        t.put(random_row(rng, int(rng.integers(0, 2600))))
    return t
