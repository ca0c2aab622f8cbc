"""Eleven parameterized hybrid query templates over the tweets table.

Templates 1-6 are hybrid searches (conjunctions of a vector threshold,
a region, a keyword and a time range); 7-11 are hybrid nearest-neighbor
rankings, two of them pre-filtered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from mmdb.bench.dataset import BBOX, T0, TIME_STEP, DatasetContext
from mmdb.query.spec import Keyword, QuerySpec, RankSpec, RankTerm, ScalarRange, SpatialContains, VectorThreshold
from mmdb.types import Rect

HYBRID_SEARCH = "hybrid_search"
HYBRID_NN = "hybrid_nn"
PROJECTION = ("id", "time", "content")


@dataclass(frozen=True)
class QueryTemplate:
    template_id: int
    name: str
    kind: str
    slots: tuple
    build: Callable

    def instantiate(self, ctx: DatasetContext, rng: np.random.Generator) -> QuerySpec:
        return self.build(ctx, rng)


def _topic(ctx, rng) -> int:
    return int(rng.integers(0, ctx.config.semantic_clusters))


def _query_vector(ctx, rng, topic: int) -> np.ndarray:
    cfg = ctx.config
    noise = rng.normal(size=cfg.dim) * (cfg.embedding_noise / np.sqrt(cfg.dim))
    return (ctx.semantic_centers[topic] + noise).astype(np.float32)


def _theta(ctx) -> float:
    # members of a topic sit about embedding_noise * sqrt(2) from a fresh query of that topic
    return float(ctx.config.embedding_noise * 1.5)


def _region(ctx, rng, half: float | None = None) -> Rect:
    c = ctx.spatial_centers[int(rng.integers(0, len(ctx.spatial_centers)))]
    h = float(rng.uniform(0.5, 2.0)) if half is None else half
    x = float(c[0] + rng.normal() * 0.5)
    y = float(c[1] + rng.normal() * 0.5)
    return Rect(max(BBOX.xmin, x - h), max(BBOX.ymin, y - h * 0.6), min(BBOX.xmax, x + h), min(BBOX.ymax, y + h * 0.6))


def _keyword(ctx, rng, topic: int | None = None) -> str:
    if topic is not None and rng.random() < 0.5:
        return ctx.topic_words[topic][int(rng.integers(0, 4))]
    # mid-frequency vocabulary words keep keyword selectivity moderate
    return ctx.vocab[int(rng.integers(5, min(200, len(ctx.vocab))))]


def _time_range(ctx, rng, frac: float | None = None) -> tuple[int, int]:
    n = max(1, ctx.loaded.get("tweets", ctx.config.tweets))
    width = frac if frac is not None else float(rng.uniform(0.02, 0.2))
    span = int(n * width) * TIME_STEP
    lo = T0 + int(rng.integers(0, max(1, n * TIME_STEP - span)))
    return lo, lo + span


def _t1(ctx, rng):
    tp = _topic(ctx, rng)
    return QuerySpec("tweets", (VectorThreshold("emb", _query_vector(ctx, rng, tp), _theta(ctx)),
                                Keyword("content", _keyword(ctx, rng, tp)),
                                SpatialContains("loc", _region(ctx, rng))), projection=PROJECTION)


def _t2(ctx, rng):
    lo, hi = _time_range(ctx, rng)
    return QuerySpec("tweets", (SpatialContains("loc", _region(ctx, rng)), ScalarRange("time", lo, hi)),
                     projection=PROJECTION)


def _t3(ctx, rng):
    lo, hi = _time_range(ctx, rng)
    return QuerySpec("tweets", (Keyword("content", _keyword(ctx, rng, _topic(ctx, rng))), ScalarRange("time", lo, hi)),
                     projection=PROJECTION)


def _t4(ctx, rng):
    tp = _topic(ctx, rng)
    return QuerySpec("tweets", (VectorThreshold("emb", _query_vector(ctx, rng, tp), _theta(ctx)),
                                SpatialContains("loc", _region(ctx, rng))), projection=PROJECTION)


def _t5(ctx, rng):
    return QuerySpec("tweets", (SpatialContains("loc", _region(ctx, rng)), Keyword("content", _keyword(ctx, rng))),
                     projection=PROJECTION)


def _t6(ctx, rng):
    tp = _topic(ctx, rng)
    lo, hi = _time_range(ctx, rng)
    return QuerySpec("tweets", (VectorThreshold("emb", _query_vector(ctx, rng, tp), _theta(ctx)),
                                ScalarRange("time", lo, hi), Keyword("content", _keyword(ctx, rng, tp))),
                     projection=PROJECTION)


def _point(ctx, rng):
    c = ctx.spatial_centers[int(rng.integers(0, len(ctx.spatial_centers)))]
    return [float(c[0] + rng.normal()), float(c[1] + rng.normal())]


def _k(rng) -> int:
    return int(rng.choice([5, 10, 20]))


def _t7(ctx, rng):
    tp = _topic(ctx, rng)
    return QuerySpec("tweets", (), RankSpec((RankTerm("vector", "emb", _query_vector(ctx, rng, tp), 1.0),), _k(rng)),
                     projection=PROJECTION)


def _t8(ctx, rng):
    tp = _topic(ctx, rng)
    terms = (RankTerm("vector", "emb", _query_vector(ctx, rng, tp), 1.0),
             RankTerm("spatial", "loc", _point(ctx, rng), float(rng.uniform(0.01, 0.1))))
    return QuerySpec("tweets", (), RankSpec(terms, _k(rng)), projection=PROJECTION)


def _t9(ctx, rng):
    tp = _topic(ctx, rng)
    terms = (RankTerm("vector", "emb", _query_vector(ctx, rng, tp), 1.0),
             RankTerm("spatial", "loc", _point(ctx, rng), float(rng.uniform(0.01, 0.1))),
             RankTerm("text", "content", ctx.topic_words[tp][0] + " " + _keyword(ctx, rng), float(rng.uniform(0.1, 1.0))))
    return QuerySpec("tweets", (), RankSpec(terms, _k(rng)), projection=PROJECTION)


def _t10(ctx, rng):
    tp = _topic(ctx, rng)
    lo, hi = _time_range(ctx, rng)
    return QuerySpec("tweets", (ScalarRange("time", lo, hi),),
                     RankSpec((RankTerm("vector", "emb", _query_vector(ctx, rng, tp), 1.0),), _k(rng)),
                     projection=PROJECTION)


def _t11(ctx, rng):
    tp = _topic(ctx, rng)
    terms = (RankTerm("vector", "emb", _query_vector(ctx, rng, tp), 1.0),
             RankTerm("spatial", "loc", _point(ctx, rng), float(rng.uniform(0.01, 0.1))))
    return QuerySpec("tweets", (SpatialContains("loc", _region(ctx, rng, half=3.0)),), RankSpec(terms, _k(rng)),
                     projection=PROJECTION)


TEMPLATES: tuple[QueryTemplate, ...] = (
    QueryTemplate(1, "vector_keyword_region", HYBRID_SEARCH, ("query vector", "theta", "keyword", "region"), _t1),
    QueryTemplate(2, "region_time", HYBRID_SEARCH, ("region", "time range"), _t2),
    QueryTemplate(3, "keyword_time", HYBRID_SEARCH, ("keyword", "time range"), _t3),
    QueryTemplate(4, "vector_region", HYBRID_SEARCH, ("query vector", "theta", "region"), _t4),
    QueryTemplate(5, "region_keyword", HYBRID_SEARCH, ("region", "keyword"), _t5),
    QueryTemplate(6, "vector_time_keyword", HYBRID_SEARCH, ("query vector", "theta", "time range", "keyword"), _t6),
    QueryTemplate(7, "nn_vector", HYBRID_NN, ("query vector", "k"), _t7),
    QueryTemplate(8, "nn_vector_spatial", HYBRID_NN, ("query vector", "point", "lambda", "k"), _t8),
    QueryTemplate(9, "nn_vector_spatial_text", HYBRID_NN, ("query vector", "point", "keyword", "lambda", "k"), _t9),
    QueryTemplate(10, "nn_vector_time_filter", HYBRID_NN, ("query vector", "time range", "k"), _t10),
    QueryTemplate(11, "nn_region_filter", HYBRID_NN, ("query vector", "point", "region", "lambda", "k"), _t11),
)

BY_ID = {t.template_id: t for t in TEMPLATES}


def templates_for_mix(mix: str) -> list[QueryTemplate]:
    if mix == "search_only":
        return [t for t in TEMPLATES if t.kind == HYBRID_SEARCH]
    if mix == "nn_only":
        return [t for t in TEMPLATES if t.kind == HYBRID_NN]
    return list(TEMPLATES)
