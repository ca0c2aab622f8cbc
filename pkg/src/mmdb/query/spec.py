"""Declarative hybrid queries: predicates, ranking terms and the JSON query DSL.

A query document looks like::

    {"table": "tweets", "select": ["id", "content"],
     "filters": [{"kind": "scalar_range", "column": "time", "lo": 0, "hi": 99},
                 {"kind": "vector_threshold", "column": "emb", "query": [...], "threshold": 0.8},
                 {"kind": "spatial_contains", "column": "loc", "region": {"rect": [0, 0, 1, 1]}},
                 {"kind": "keyword", "column": "content", "term": "storm"}],
     "rank": {"terms": [{"modality": "vector", "column": "emb", "query": [...], "weight": 1.0}],
              "k": 10},
     "mode": "snapshot" | {"sync_seconds": 60} | "async",
     "options": {"n_probe": 4, "nra_mode": "refine", "force_plan": "IndexIntersect"}}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from mmdb.errors import QueryError
from mmdb.index.ivf import l2_distances
from mmdb.index.text import tokenize
from mmdb.types import SCALAR_KINDS, Point, TableSchema, region_from_obj, region_to_obj

MODALITY_KINDS = {"vector": "vector", "spatial": "geometry", "text": "text"}


def _as_vector(q) -> np.ndarray:
    arr = np.asarray(q, dtype=np.float32)
    if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
        raise QueryError("query vector must be a non-empty finite 1-d array")
    return arr


@dataclass(frozen=True)
class Predicate:
    column: str

    kind = "predicate"
    index_kind = ""

    def matches(self, attrs: dict) -> bool:
        raise NotImplementedError

    def mask(self, records) -> np.ndarray:
        """Vectorized :meth:`matches` over a list of records."""
        return np.fromiter((self.matches(r.attrs) for r in records), dtype=bool, count=len(records))

    def to_obj(self) -> dict:
        raise NotImplementedError

    @property
    def servable(self) -> bool:
        """Whether an index of ``index_kind`` can answer this predicate."""
        return True


@dataclass(frozen=True)
class ScalarRange(Predicate):
    lo: Any = None
    hi: Any = None

    kind = "scalar_range"
    index_kind = "btree"

    def __post_init__(self):
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            raise QueryError(f"range lo {self.lo!r} > hi {self.hi!r}")

    @property
    def bounds(self):
        lo = -math.inf if self.lo is None else self.lo
        hi = math.inf if self.hi is None else self.hi
        return lo, hi

    def matches(self, attrs: dict) -> bool:
        v = attrs.get(self.column)
        if v is None:
            return False
        return (self.lo is None or v >= self.lo) and (self.hi is None or v <= self.hi)

    def to_obj(self):
        return {"kind": self.kind, "column": self.column, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True, eq=False)
class VectorThreshold(Predicate):
    query: np.ndarray = None
    threshold: float = 0.0

    kind = "vector_threshold"
    index_kind = "ivf"

    def __post_init__(self):
        object.__setattr__(self, "query", _as_vector(self.query))
        if not (self.threshold >= 0 and math.isfinite(self.threshold)):
            raise QueryError("vector threshold must be finite and >= 0")

    def distance(self, attrs: dict) -> float:
        v = attrs.get(self.column)
        if v is None:
            return math.inf
        return float(l2_distances(np.asarray(v)[None, :], self.query)[0])

    def matches(self, attrs: dict) -> bool:
        return self.distance(attrs) < self.threshold

    def mask(self, records) -> np.ndarray:
        out = np.zeros(len(records), dtype=bool)
        idx = [i for i, r in enumerate(records) if r.attrs.get(self.column) is not None]
        if idx:
            vecs = np.stack([records[i].attrs[self.column] for i in idx])
            out[idx] = l2_distances(vecs, self.query) < self.threshold
        return out

    def to_obj(self):
        return {"kind": self.kind, "column": self.column, "query": self.query.tolist(),
                "threshold": self.threshold}

    def __eq__(self, other):
        return (isinstance(other, VectorThreshold) and self.column == other.column
                and self.threshold == other.threshold and np.array_equal(self.query, other.query))

    def __hash__(self):
        return hash((self.kind, self.column, self.threshold, self.query.tobytes()))


@dataclass(frozen=True)
class SpatialContains(Predicate):
    region: Any = None

    kind = "spatial_contains"
    index_kind = "spatial"

    def __post_init__(self):
        object.__setattr__(self, "region", region_from_obj(self.region))

    def matches(self, attrs: dict) -> bool:
        g = attrs.get(self.column)
        return isinstance(g, Point) and self.region.contains_point(g.x, g.y)

    def mask(self, records) -> np.ndarray:
        out = np.zeros(len(records), dtype=bool)
        pts = [(i, g) for i, r in enumerate(records) if isinstance(g := r.attrs.get(self.column), Point)]
        if pts:
            idx = [i for i, _ in pts]
            xs = np.array([g.x for _, g in pts], dtype=np.float64)
            ys = np.array([g.y for _, g in pts], dtype=np.float64)
            out[idx] = self.region.contains_points(xs, ys)
        return out

    def to_obj(self):
        return {"kind": self.kind, "column": self.column, "region": region_to_obj(self.region)}


@dataclass(frozen=True)
class Keyword(Predicate):
    term: str = ""

    kind = "keyword"
    index_kind = "inverted"

    def __post_init__(self):
        if not isinstance(self.term, str) or not self.term:
            raise QueryError("keyword term must be a non-empty string")

    @property
    def token(self) -> str | None:
        """The single normalized token this term denotes, if it is one."""
        toks = tokenize(self.term)
        return toks[0] if len(toks) == 1 and toks[0] == self.term.lower() else None

    @property
    def servable(self) -> bool:
        return self.token is not None

    def matches(self, attrs: dict) -> bool:
        text = attrs.get(self.column)
        if text is None:
            return False
        tok = self.token
        if tok is not None:
            return tok in tokenize(text)
        return self.term.lower() in text.lower()  # raw substring fallback

    def to_obj(self):
        return {"kind": self.kind, "column": self.column, "term": self.term}


_PRED_TYPES = {c.kind: c for c in (ScalarRange, VectorThreshold, SpatialContains, Keyword)}


def predicate_from_obj(obj: dict) -> Predicate:
    try:
        kind = obj["kind"]
        cls = _PRED_TYPES[kind]
    except KeyError:
        raise QueryError(f"unknown predicate: {obj!r}") from None
    col = obj.get("column")
    if not col:
        raise QueryError("predicate needs a column")
    if cls is ScalarRange:
        return ScalarRange(col, obj.get("lo"), obj.get("hi"))
    if cls is VectorThreshold:
        return VectorThreshold(col, obj["query"], float(obj["threshold"]))
    if cls is SpatialContains:
        return SpatialContains(col, obj["region"])
    return Keyword(col, obj["term"])


@dataclass(frozen=True, eq=False)
class RankTerm:
    modality: str  # vector | spatial | text
    column: str
    query: Any
    weight: float = 1.0

    def __post_init__(self):
        if self.modality not in MODALITY_KINDS:
            raise QueryError(f"unknown rank modality {self.modality!r}")
        w = float(self.weight)
        if not (math.isfinite(w) and w >= 0):
            raise QueryError("rank weights must be finite and >= 0")
        object.__setattr__(self, "weight", w)
        if self.modality == "vector":
            object.__setattr__(self, "query", _as_vector(self.query))
        elif self.modality == "spatial":
            q = self.query
            if isinstance(q, dict):
                q = q.get("point")
            x, y = q
            object.__setattr__(self, "query", Point(float(x), float(y)))
        else:
            q = self.query
            terms = tokenize(q) if isinstance(q, str) else [t.lower() for t in q]
            if not terms:
                raise QueryError("text rank term needs at least one token")
            object.__setattr__(self, "query", tuple(dict.fromkeys(terms)))

    def to_obj(self):
        if self.modality == "vector":
            q = self.query.tolist()
        elif self.modality == "spatial":
            q = [self.query.x, self.query.y]
        else:
            q = " ".join(self.query)
        return {"modality": self.modality, "column": self.column, "query": q, "weight": self.weight}

    def __eq__(self, other):
        if not isinstance(other, RankTerm):
            return NotImplemented
        return self.to_obj() == other.to_obj()

    def __hash__(self):
        return hash(json.dumps(self.to_obj(), sort_keys=True))


@dataclass(frozen=True)
class RankSpec:
    terms: tuple
    k: int

    def __post_init__(self):
        if not self.terms:
            raise QueryError("rank needs at least one term")
        if int(self.k) < 1:
            raise QueryError("rank k must be >= 1")
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "k", int(self.k))

    @property
    def weights(self) -> tuple:
        return tuple(t.weight for t in self.terms)

    def to_obj(self):
        return {"terms": [t.to_obj() for t in self.terms], "k": self.k}


@dataclass(frozen=True)
class Mode:
    kind: str = "snapshot"  # snapshot | sync | async
    interval: float | None = None

    def __post_init__(self):
        if self.kind not in ("snapshot", "sync", "async"):
            raise QueryError(f"unknown mode {self.kind!r}")
        if self.kind == "sync" and not (self.interval and self.interval > 0):
            raise QueryError("sync interval must be > 0")

    def to_obj(self):
        if self.kind == "sync":
            return {"sync_seconds": self.interval}
        return self.kind

    @classmethod
    def from_obj(cls, obj) -> "Mode":
        if obj is None or obj == "snapshot":
            return cls()
        if obj == "async":
            return cls("async")
        if isinstance(obj, dict):
            if "sync_seconds" in obj:
                return cls("sync", float(obj["sync_seconds"]))
            if obj.get("kind"):
                return cls(obj["kind"], obj.get("interval"))
        raise QueryError(f"invalid mode {obj!r}")


@dataclass(frozen=True)
class QueryOptions:
    n_probe: int | None = None
    nra_mode: str = "refine"  # refine | faithful
    force_plan: str | None = None
    use_views: bool = True

    def __post_init__(self):
        if self.nra_mode not in ("refine", "faithful"):
            raise QueryError("nra_mode must be refine or faithful")
        if self.n_probe is not None and int(self.n_probe) < 1:
            raise QueryError("n_probe must be >= 1")


@dataclass(frozen=True)
class QuerySpec:
    table: str
    filters: tuple = ()
    rank: RankSpec | None = None
    projection: tuple = ()
    mode: Mode = field(default_factory=Mode)
    options: QueryOptions = field(default_factory=QueryOptions)

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(self.filters))
        object.__setattr__(self, "projection", tuple(self.projection))
        if not self.filters and self.rank is None:
            raise QueryError("a query needs filters or a rank clause")

    @property
    def k(self) -> int | None:
        return self.rank.k if self.rank else None

    def validate(self, schema: TableSchema) -> "QuerySpec":
        for p in self.filters:
            if not schema.has_column(p.column):
                raise QueryError(f"unknown column {p.column!r}")
            kind = schema.column(p.column).kind
            ok = {
                "scalar_range": kind in SCALAR_KINDS,
                "vector_threshold": kind == "vector",
                "spatial_contains": kind == "geometry",
                "keyword": kind in ("text", "string"),
            }[p.kind]
            if not ok:
                raise QueryError(f"{p.kind} predicate cannot apply to {kind} column {p.column!r}")
            if p.kind == "vector_threshold" and len(p.query) != schema.column(p.column).dim:
                raise QueryError(f"query vector for {p.column!r} has wrong dimension")
        if self.rank:
            for t in self.rank.terms:
                if not schema.has_column(t.column):
                    raise QueryError(f"unknown column {t.column!r}")
                col = schema.column(t.column)
                if col.kind != MODALITY_KINDS[t.modality]:
                    raise QueryError(f"{t.modality} rank term cannot apply to {col.kind} column {t.column!r}")
                if t.modality == "vector" and len(t.query) != col.dim:
                    raise QueryError(f"query vector for {t.column!r} has wrong dimension")
        for c in self.projection:
            if not schema.has_column(c):
                raise QueryError(f"unknown column {c!r} in select")
        return self

    def with_options(self, **kw) -> "QuerySpec":
        opts = {**self.options.__dict__, **kw}
        return QuerySpec(self.table, self.filters, self.rank, self.projection, self.mode, QueryOptions(**opts))

    def to_obj(self) -> dict:
        obj: dict = {"table": self.table, "select": list(self.projection),
                     "filters": [p.to_obj() for p in self.filters]}
        if self.rank:
            obj["rank"] = self.rank.to_obj()
        obj["mode"] = self.mode.to_obj()
        o = self.options
        obj["options"] = {"n_probe": o.n_probe, "nra_mode": o.nra_mode, "force_plan": o.force_plan}
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "QuerySpec":
        if not isinstance(obj, dict) or "table" not in obj:
            raise QueryError("query document needs a table")
        filters = tuple(predicate_from_obj(f) for f in obj.get("filters") or ())
        rank = None
        if obj.get("rank"):
            r = obj["rank"]
            terms = tuple(RankTerm(t["modality"], t["column"], t["query"], t.get("weight", 1.0))
                          for t in r.get("terms", ()))
            if "k" not in r:
                raise QueryError("rank clause needs k")
            rank = RankSpec(terms, r["k"])
        o = obj.get("options") or {}
        options = QueryOptions(o.get("n_probe"), o.get("nra_mode", "refine"), o.get("force_plan"),
                               o.get("use_views", True))
        return cls(obj["table"], filters, rank, tuple(obj.get("select") or ()), Mode.from_obj(obj.get("mode")),
                   options)

    @classmethod
    def parse(cls, text: str) -> "QuerySpec":
        try:
            return cls.from_obj(json.loads(text))
        except json.JSONDecodeError as exc:
            raise QueryError(f"invalid query document: {exc}") from exc


def spec_digest(spec: QuerySpec) -> str:
    return json.dumps(spec.to_obj(), sort_keys=True)
