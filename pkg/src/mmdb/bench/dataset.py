"""Synthetic geo-tagged multimodal corpus: tweets, points of interest, and city regions."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from mmdb.storage.table import TableConfig
from mmdb.types import Column, IndexSpec, Point, Rect, TableSchema

BBOX = Rect(-125.0, 24.0, -66.0, 50.0)
T0 = 1_600_000_000
TIME_STEP = 10  # seconds between consecutive tweets
SCENARIOS = {"write_heavy": (1, 9), "read_heavy": (9, 1)}
MIXES = ("search_only", "nn_only", "mixed")


@dataclass
class WorkloadConfig:
    tweets: int = 500_000
    pois: int = 50_000
    cities: int = 2_000
    dim: int = 128
    scenario: str = "read_heavy"  # write_heavy | read_heavy | custom
    read_ratio: int = 9
    write_ratio: int = 1
    template_mix: str = "mixed"
    preload_fraction: float = 0.8
    seed: int = 0
    ops: int = 1000
    duration: float | None = None  # seconds; overrides ops when set
    query_workers: int = 4
    n_centroids: int = 64
    spatial_clusters: int = 24
    semantic_clusters: int = 32
    vocabulary: int = 5000
    words_per_tweet: int = 8
    embedding_noise: float = 0.15
    flush_threshold_bytes: int = 8 * 1024 * 1024
    indexes: bool = True

    def __post_init__(self):
        if self.scenario in SCENARIOS:
            self.read_ratio, self.write_ratio = SCENARIOS[self.scenario]
        elif self.scenario != "custom":
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.read_ratio < 0 or self.write_ratio < 0 or self.read_ratio + self.write_ratio == 0:
            raise ValueError("read/write ratio components must be >= 0 and not both zero")
        if self.template_mix not in MIXES:
            raise ValueError(f"template_mix must be one of {MIXES}")
        if not 0.0 <= self.preload_fraction <= 1.0:
            raise ValueError("preload_fraction must be in [0, 1]")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @classmethod
    def from_obj(cls, obj: dict) -> "WorkloadConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_file(cls, path: str) -> "WorkloadConfig":
        with open(path) as f:
            return cls.from_obj(json.load(f))

    def to_obj(self) -> dict:
        return asdict(self)

    def table_config(self) -> TableConfig:
        return TableConfig(flush_threshold_bytes=self.flush_threshold_bytes, seed=self.seed)


def tweet_schema(dim: int, n_centroids: int = 64, indexes: bool = True) -> TableSchema:
    cols = (Column("id", "int64"), Column("time", "timestamp"), Column("user", "int64"),
            Column("loc", "geometry"), Column("content", "text"), Column("emb", "vector", dim))
    idx = (IndexSpec("time", "btree"), IndexSpec("loc", "spatial"), IndexSpec("content", "inverted"),
           IndexSpec("emb", "ivf", {"n_centroids": n_centroids})) if indexes else ()
    return TableSchema("tweets", cols, "id", idx)


def poi_schema(dim: int, n_centroids: int = 64, indexes: bool = True) -> TableSchema:
    cols = (Column("id", "int64"), Column("name", "string"), Column("category", "string"),
            Column("loc", "geometry"), Column("description", "text"), Column("emb", "vector", dim))
    idx = (IndexSpec("category", "btree"), IndexSpec("loc", "spatial"), IndexSpec("description", "inverted"),
           IndexSpec("emb", "ivf", {"n_centroids": n_centroids})) if indexes else ()
    return TableSchema("pois", cols, "id", idx)


def city_schema() -> TableSchema:
    cols = (Column("id", "int64"), Column("name", "string"), Column("region", "geometry"),
            Column("population", "int64"))
    return TableSchema("cities", cols, "id", (IndexSpec("population", "btree"),))


CATEGORIES = ("food", "shop", "park", "museum", "hotel", "bar", "school", "clinic")


@dataclass
class DatasetContext:
    """Generator state shared by loading, template sampling and the write stream."""

    config: WorkloadConfig
    spatial_centers: np.ndarray = None
    spatial_scales: np.ndarray = None
    semantic_centers: np.ndarray = None
    topic_words: list = field(default_factory=list)
    vocab: list = field(default_factory=list)
    zipf_p: np.ndarray = None
    cities: list = field(default_factory=list)
    loaded: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: WorkloadConfig) -> "DatasetContext":
        rng = np.random.default_rng([config.seed, 0])
        sc = np.column_stack([rng.uniform(BBOX.xmin + 2, BBOX.xmax - 2, config.spatial_clusters),
                              rng.uniform(BBOX.ymin + 1, BBOX.ymax - 1, config.spatial_clusters)])
        scales = rng.uniform(0.3, 1.5, config.spatial_clusters)
        sem = rng.normal(size=(config.semantic_clusters, config.dim))
        sem /= np.linalg.norm(sem, axis=1, keepdims=True)
        vocab = [f"w{i}" for i in range(config.vocabulary)]
        ranks = np.arange(1, config.vocabulary + 1, dtype=np.float64)
        p = 1.0 / ranks
        p /= p.sum()
        topics = [[f"topic{c}x{j}" for j in range(4)] for c in range(config.semantic_clusters)]
        ctx = cls(config, sc, scales, sem.astype(np.float32), topics, vocab, p)
        ctx.cities = [_city(i, rng) for i in range(config.cities)]
        return ctx

    def _rng(self, stream: int, start: int):
        return np.random.default_rng([self.config.seed, stream, start])

    def tweets(self, start: int, stop: int) -> list[dict]:
        """Tweet rows ``start .. stop-1``, deterministic for a given seed and range."""
        cfg = self.config
        out = []
        for a in range(start, stop, 4096):
            b = min(stop, a + 4096)
            rng = self._rng(1, a)
            n = b - a
            sc = rng.integers(0, cfg.spatial_clusters, n)
            xy = self.spatial_centers[sc] + rng.normal(size=(n, 2)) * self.spatial_scales[sc, None]
            xy[:, 0] = np.clip(xy[:, 0], BBOX.xmin, BBOX.xmax)
            xy[:, 1] = np.clip(xy[:, 1], BBOX.ymin, BBOX.ymax)
            topic = rng.integers(0, cfg.semantic_clusters, n)
            emb = self.semantic_centers[topic] + rng.normal(size=(n, cfg.dim)).astype(np.float32) * (
                cfg.embedding_noise / np.sqrt(cfg.dim))
            words = rng.choice(len(self.vocab), size=(n, cfg.words_per_tweet), p=self.zipf_p)
            tw = rng.integers(0, 4, n)
            jitter = rng.integers(0, TIME_STEP, n)
            users = rng.integers(0, max(1, cfg.tweets // 20), n)
            for i in range(n):
                tid = a + i
                text = " ".join([self.topic_words[topic[i]][tw[i]]] + [self.vocab[w] for w in words[i]])
                out.append({"id": tid, "time": T0 + tid * TIME_STEP + int(jitter[i]), "user": int(users[i]),
                            "loc": Point(float(xy[i, 0]), float(xy[i, 1])), "content": text,
                            "emb": emb[i].astype(np.float32)})
        return out

    def pois(self, start: int, stop: int) -> list[dict]:
        cfg = self.config
        rng = self._rng(2, start)
        out = []
        n = stop - start
        sc = rng.integers(0, cfg.spatial_clusters, n)
        xy = self.spatial_centers[sc] + rng.normal(size=(n, 2)) * self.spatial_scales[sc, None]
        topic = rng.integers(0, cfg.semantic_clusters, n)
        emb = self.semantic_centers[topic] + rng.normal(size=(n, cfg.dim)).astype(np.float32) * (
            cfg.embedding_noise / np.sqrt(cfg.dim))
        cat = rng.integers(0, len(CATEGORIES), n)
        for i in range(n):
            pid = start + i
            x = float(np.clip(xy[i, 0], BBOX.xmin, BBOX.xmax))
            y = float(np.clip(xy[i, 1], BBOX.ymin, BBOX.ymax))
            out.append({"id": pid, "name": f"poi{pid}", "category": CATEGORIES[cat[i]], "loc": Point(x, y),
                        "description": f"{CATEGORIES[cat[i]]} {self.topic_words[topic[i]][0]}",
                        "emb": emb[i].astype(np.float32)})
        return out

    def tweet_topic_center(self, topic: int) -> np.ndarray:
        return self.semantic_centers[topic]


def _city(i: int, rng) -> dict:
    cx = rng.uniform(BBOX.xmin, BBOX.xmax)
    cy = rng.uniform(BBOX.ymin, BBOX.ymax)
    w, h = rng.uniform(0.1, 1.0, 2)
    return {"id": i, "name": f"city{i}", "region": Rect(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2),
            "population": int(rng.integers(1_000, 5_000_000))}


def preload_counts(config: WorkloadConfig) -> dict:
    return {"tweets": int(round(config.tweets * config.preload_fraction)),
            "pois": int(round(config.pois * config.preload_fraction)), "cities": config.cities}


def generate_dataset(db, config: WorkloadConfig, batch: int = 8192) -> DatasetContext:
    """Create the three tables (if absent) and insert the preload share of every table."""
    ctx = DatasetContext.create(config)
    tcfg = config.table_config()
    schemas = {"tweets": tweet_schema(config.dim, config.n_centroids, config.indexes),
               "pois": poi_schema(config.dim, config.n_centroids, config.indexes), "cities": city_schema()}
    for name, schema in schemas.items():
        if name not in db:
            db.create_table(schema, tcfg)
    counts = preload_counts(config)
    for name, gen in (("tweets", ctx.tweets), ("pois", ctx.pois)):
        t = db.table(name)
        for a in range(0, counts[name], batch):
            t.put_many(gen(a, min(counts[name], a + batch)))
    db.table("cities").put_many(ctx.cities)
    ctx.loaded = dict(counts)
    return ctx
