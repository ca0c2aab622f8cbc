"""Schema, record and geometry types shared by every layer."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from mmdb.errors import DimensionMismatchError, KindMismatchError, SchemaError

SCALAR_KINDS = frozenset({"int64", "float64", "string", "timestamp"})
NUMERIC_KINDS = frozenset({"int64", "float64", "timestamp"})
KINDS = SCALAR_KINDS | {"vector", "geometry", "text", "blob"}
INDEX_KINDS = ("btree", "ivf", "spatial", "inverted")

# index kind -> column kinds it may be declared on
_INDEX_COLUMN_KINDS = {
    "btree": SCALAR_KINDS,
    "ivf": frozenset({"vector"}),
    "spatial": frozenset({"geometry"}),
    "inverted": frozenset({"text"}),
}

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class Point(NamedTuple):
    x: float
    y: float


class Rect(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def area(self) -> float:
        return max(0.0, self.xmax - self.xmin) * max(0.0, self.ymax - self.ymin)

    @property
    def center(self) -> Point:
        return Point((self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2)

    def contains_point(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def contains_rect(self, other: "Rect") -> bool:
        return (
            self.xmin <= other.xmin
            and self.ymin <= other.ymin
            and other.xmax <= self.xmax
            and other.ymax <= self.ymax
        )

    def intersects(self, other: "Rect") -> bool:
        return not (
            other.xmin > self.xmax
            or other.xmax < self.xmin
            or other.ymin > self.ymax
            or other.ymax < self.ymin
        )

    def intersection(self, other: "Rect") -> "Rect | None":
        if not self.intersects(other):
            return None
        return Rect(
            max(self.xmin, other.xmin),
            max(self.ymin, other.ymin),
            min(self.xmax, other.xmax),
            min(self.ymax, other.ymax),
        )

    def union(self, other: "Rect") -> "Rect":
        return Rect(
            min(self.xmin, other.xmin),
            min(self.ymin, other.ymin),
            max(self.xmax, other.xmax),
            max(self.ymax, other.ymax),
        )

    def bbox(self) -> "Rect":
        return self

    def contains_points(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return (xs >= self.xmin) & (xs <= self.xmax) & (ys >= self.ymin) & (ys <= self.ymax)


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given as a vertex ring (closing vertex optional)."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ring = [tuple(map(float, v)) for v in self.vertices]
        if len(ring) > 1 and ring[0] == ring[-1]:
            ring = ring[:-1]
        if len(set(ring)) < 3:
            raise SchemaError("polygon needs at least 3 distinct vertices")
        object.__setattr__(self, "vertices", tuple(ring))

    def bbox(self) -> Rect:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return Rect(min(xs), min(ys), max(xs), max(ys))

    @property
    def area(self) -> float:
        s = 0.0
        n = len(self.vertices)
        for i in range(n):
            x1, y1 = self.vertices[i]
            x2, y2 = self.vertices[(i + 1) % n]
            s += x1 * y2 - x2 * y1
        return abs(s) / 2

    def contains_point(self, x: float, y: float) -> bool:
        return bool(self.contains_points(np.array([x]), np.array([y]))[0])

    def contains_points(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Ray casting; points on an edge count as inside."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        inside = np.zeros(xs.shape, dtype=bool)
        on_edge = np.zeros(xs.shape, dtype=bool)
        n = len(self.vertices)
        for i in range(n):
            x1, y1 = self.vertices[i]
            x2, y2 = self.vertices[(i + 1) % n]
            # on-edge test: collinear and within the segment's box
            cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
            within = (
                (xs >= min(x1, x2)) & (xs <= max(x1, x2)) & (ys >= min(y1, y2)) & (ys <= max(y1, y2))
            )
            on_edge |= (np.abs(cross) <= 1e-12 * max(1.0, abs(x2 - x1) + abs(y2 - y1))) & within
            if y1 == y2:
                continue
            crosses = (y1 > ys) != (y2 > ys)
            xint = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (xs < xint)
        return inside | on_edge

    def intersects(self, other: Rect) -> bool:
        return self.bbox().intersects(other)


Region = Rect | Polygon


def region_from_obj(obj: Any) -> Region:
    """Parse ``{"rect": [xmin, ymin, xmax, ymax]}`` or ``{"polygon": [[x, y], ...]}``."""
    if isinstance(obj, (Rect, Polygon)):
        return obj
    if isinstance(obj, dict):
        if "rect" in obj:
            r = Rect(*map(float, obj["rect"]))
            if r.xmin > r.xmax or r.ymin > r.ymax:
                raise SchemaError(f"invalid rect {obj['rect']}")
            return r
        if "polygon" in obj:
            return Polygon(tuple(tuple(v) for v in obj["polygon"]))
    raise SchemaError(f"invalid region: {obj!r}")


def region_to_obj(region: Region) -> dict:
    if isinstance(region, Rect):
        return {"rect": list(region)}
    return {"polygon": [list(v) for v in region.vertices]}


def geometry_from_obj(obj: Any):
    if obj is None or isinstance(obj, (Point, Rect, Polygon)):
        return obj
    if isinstance(obj, dict):
        if "point" in obj:
            x, y = obj["point"]
            return Point(float(x), float(y))
        return region_from_obj(obj)
    if isinstance(obj, (list, tuple)) and len(obj) == 2:
        return Point(float(obj[0]), float(obj[1]))
    raise SchemaError(f"invalid geometry: {obj!r}")


def geometry_to_obj(g) -> dict | None:
    if g is None:
        return None
    if isinstance(g, Point):
        return {"point": [g.x, g.y]}
    return region_to_obj(g)


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    dim: int | None = None

    def __post_init__(self):
        if not _IDENT.match(self.name):
            raise SchemaError(f"invalid column name {self.name!r}")
        if self.kind not in KINDS:
            raise SchemaError(f"unknown column kind {self.kind!r}")
        if self.kind == "vector":
            if self.dim is None or int(self.dim) < 1:
                raise SchemaError(f"vector column {self.name} needs dim >= 1")
        elif self.dim is not None:
            raise SchemaError(f"dim only applies to vector columns ({self.name})")


@dataclass(frozen=True)
class IndexSpec:
    column: str
    kind: str
    params: dict = field(default_factory=dict, hash=False, compare=True)

    def __post_init__(self):
        if self.kind not in INDEX_KINDS:
            raise SchemaError(f"unknown index kind {self.kind!r}")
        if self.kind == "ivf":
            n = int(self.params.get("n_centroids", 16))
            if n < 1:
                raise SchemaError("ivf n_centroids must be positive")

    @property
    def n_centroids(self) -> int:
        return int(self.params.get("n_centroids", 16))


@dataclass(frozen=True)
class TableSchema:
    table_name: str
    columns: tuple[Column, ...]
    primary_key: str
    index_specs: tuple[IndexSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "index_specs", tuple(self.index_specs))
        if not _IDENT.match(self.table_name):
            raise SchemaError(f"invalid table name {self.table_name!r}")
        if not self.columns:
            raise SchemaError("schema has no columns")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")
        by_name = {c.name: c for c in self.columns}
        pk = by_name.get(self.primary_key)
        if pk is None:
            raise SchemaError(f"primary key {self.primary_key!r} is not a column")
        if pk.kind not in ("int64", "string"):
            raise SchemaError("primary key must be int64 or string")
        seen = set()
        for spec in self.index_specs:
            col = by_name.get(spec.column)
            if col is None:
                raise SchemaError(f"index on unknown column {spec.column!r}")
            if spec.column in seen:
                raise SchemaError(f"more than one index on {spec.column!r}")
            seen.add(spec.column)
            if col.kind not in _INDEX_COLUMN_KINDS[spec.kind]:
                raise KindMismatchError(
                    f"{spec.kind} index cannot be declared on {col.kind} column {col.name!r}"
                )

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    @property
    def pk_kind(self) -> str:
        return self.column(self.primary_key).kind

    def index_for(self, column: str) -> IndexSpec | None:
        for spec in self.index_specs:
            if spec.column == column:
                return spec
        return None

    def to_obj(self) -> dict:
        return {
            "table_name": self.table_name,
            "primary_key": self.primary_key,
            "columns": [
                {"name": c.name, "kind": c.kind, **({"dim": c.dim} if c.dim else {})}
                for c in self.columns
            ],
            "index_specs": [
                {"column": s.column, "kind": s.kind, "params": dict(s.params)}
                for s in self.index_specs
            ],
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "TableSchema":
        cols = []
        for c in obj.get("columns", []):
            kind = c["kind"]
            dim = c.get("dim")
            m = re.match(r"^vector\((\d+)\)$", kind)
            if m:
                kind, dim = "vector", int(m.group(1))
            cols.append(Column(c["name"], kind, dim))
        specs = []
        for s in obj.get("index_specs", obj.get("indexes", [])):
            kind = s["kind"]
            params = dict(s.get("params", {}))
            m = re.match(r"^ivf\((\d+)\)$", kind)
            if m:
                kind = "ivf"
                params.setdefault("n_centroids", int(m.group(1)))
            specs.append(IndexSpec(s["column"], kind, params))
        return cls(obj["table_name"], tuple(cols), obj["primary_key"], tuple(specs))

    def coerce(self, attrs: dict) -> dict:
        """Validate ``attrs`` against the schema, returning normalized values."""
        out = {}
        for name in attrs:
            if not self.has_column(name):
                raise SchemaError(f"unknown column {name!r} for table {self.table_name}")
        for col in self.columns:
            v = attrs.get(col.name)
            if v is None:
                if col.name == self.primary_key:
                    raise SchemaError("primary key value missing")
                out[col.name] = None
                continue
            out[col.name] = coerce_value(col, v)
        return out


def coerce_value(col: Column, v: Any) -> Any:
    kind = col.kind
    try:
        if kind in ("int64", "timestamp"):
            if isinstance(v, bool) or not float(v).is_integer():
                raise SchemaError(f"{col.name}: expected integer, got {v!r}")
            iv = int(v)
            if not -(2**63) <= iv < 2**63:
                raise SchemaError(f"{col.name}: int64 overflow")
            return iv
        if kind == "float64":
            f = float(v)
            if not math.isfinite(f):
                raise SchemaError(f"{col.name}: non-finite float")
            return f
        if kind in ("string", "text"):
            if not isinstance(v, str):
                raise SchemaError(f"{col.name}: expected str, got {type(v).__name__}")
            return v
        if kind == "blob":
            if isinstance(v, str):
                raise SchemaError(f"{col.name}: expected bytes")
            return bytes(v)
        if kind == "vector":
            arr = np.asarray(v, dtype=np.float32)
            if arr.ndim != 1 or arr.shape[0] != col.dim:
                raise DimensionMismatchError(
                    f"{col.name}: expected {col.dim} components, got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"{col.name}: non-finite vector component")
            return arr
        if kind == "geometry":
            return geometry_from_obj(v)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{col.name}: cannot coerce {v!r} to {kind}") from exc
    raise SchemaError(f"unsupported kind {kind}")


@dataclass
class Record:
    key: Any
    attrs: dict
    seqno: int = 0
    tombstone: bool = False

    def get(self, column: str, default=None):
        return self.attrs.get(column, default)
