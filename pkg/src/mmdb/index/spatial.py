"""Per-segment Z-order (Morton) index over point geometries.

Root block::

    tag u8 = 2 | count u64 | has_mbr u8 | mbr 4 x f64 | domain 4 x f64 |
    n_leaves u32 | (first z u64 | last z u64 | handle u64,u32 | count u32)*

Leaf block: ``count u32 | (zkey u64 | x f64 | y f64 | key | handle)*`` sorted
by ``(zkey, key)``.  Entries carry the exact coordinates so range filters and
nearest-neighbour distances never need the data block.
"""

from __future__ import annotations

import heapq
import itertools
import math
import struct
from dataclasses import dataclass

import numpy as np

from mmdb.codec import pack_handle, unpack_handle
from mmdb.index.base import Hit, LazySortedIterator
from mmdb.index.layout import HANDLE_FIELDS, EntryLayout, chunk_ranges
from mmdb.storage.blocks import BlockHandle
from mmdb.types import Point, Polygon, Rect

TAG = 2
DEFAULT_DOMAIN = Rect(-180.0, -90.0, 180.0, 90.0)
MAX_INTERVALS = 64
LEAF_TARGET_BYTES = 4096
_Q = 2**32
_ROOT_HEAD = struct.Struct("<BQB4d4dI")

# points clamped into the domain by zorder_encode
out_of_domain_count = 0


def _part1by1(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x00000000FFFFFFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x0000FFFF0000FFFF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x00FF00FF00FF00FF)
    v = (v | (v << np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    v = (v | (v << np.uint64(2))) & np.uint64(0x3333333333333333)
    v = (v | (v << np.uint64(1))) & np.uint64(0x5555555555555555)
    return v


def _compact1by1(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x5555555555555555)
    v = (v | (v >> np.uint64(1))) & np.uint64(0x3333333333333333)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x00FF00FF00FF00FF)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x0000FFFF0000FFFF)
    v = (v | (v >> np.uint64(16))) & np.uint64(0x00000000FFFFFFFF)
    return v


def quantize(xs, ys, domain: Rect = DEFAULT_DOMAIN):
    """32-bit per-axis cell coordinates; clamps out-of-domain points."""
    global out_of_domain_count
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    fx = np.floor((xs - domain.xmin) / (domain.xmax - domain.xmin) * _Q)
    fy = np.floor((ys - domain.ymin) / (domain.ymax - domain.ymin) * _Q)
    bad = (fx < 0) | (fx >= _Q) | (fy < 0) | (fy >= _Q)
    if bad.any():
        out_of_domain_count += int(bad.sum())
    qx = np.clip(fx, 0, _Q - 1).astype(np.uint64)
    qy = np.clip(fy, 0, _Q - 1).astype(np.uint64)
    return qx, qy


def zorder_encode_many(xs, ys, domain: Rect = DEFAULT_DOMAIN) -> np.ndarray:
    qx, qy = quantize(xs, ys, domain)
    return _part1by1(qx) | (_part1by1(qy) << np.uint64(1))


def zorder_encode(point, domain: Rect = DEFAULT_DOMAIN) -> int:
    x, y = point
    return int(zorder_encode_many([x], [y], domain)[0])


def zorder_decode(zkey: int, domain: Rect = DEFAULT_DOMAIN) -> Point:
    """Lower-left corner of the quantization cell holding ``zkey``."""
    z = np.array([zkey], dtype=np.uint64)
    qx = int(_compact1by1(z)[0])
    qy = int(_compact1by1(z >> np.uint64(1))[0])
    w = (domain.xmax - domain.xmin) / _Q
    h = (domain.ymax - domain.ymin) / _Q
    return Point(domain.xmin + qx * w, domain.ymin + qy * h)


# -- quadtree cells over z-space -------------------------------------------------


@dataclass(frozen=True)
class Cell:
    level: int  # 0 (whole domain) .. 32 (one quantization cell)
    cx: int
    cy: int

    @property
    def shift(self) -> int:
        return 32 - self.level

    def q_range(self):
        s = self.shift
        return (self.cx << s, ((self.cx + 1) << s) - 1, self.cy << s, ((self.cy + 1) << s) - 1)

    def z_range(self) -> tuple[int, int]:
        p = int(_part1by1(np.array([self.cx]))[0]) | (int(_part1by1(np.array([self.cy]))[0]) << 1)
        s = 2 * self.shift
        return p << s, ((p + 1) << s) - 1

    def children(self):
        for dy in (0, 1):
            for dx in (0, 1):
                yield Cell(self.level + 1, 2 * self.cx + dx, 2 * self.cy + dy)

    def rect(self, domain: Rect) -> Rect:
        """Coordinate bounds; cells on the domain border extend to infinity (clamped points)."""
        x0, x1, y0, y1 = self.q_range()
        w = (domain.xmax - domain.xmin) / _Q
        h = (domain.ymax - domain.ymin) / _Q
        eps_x, eps_y = w * 1e-6, h * 1e-6
        xmin = -math.inf if x0 == 0 else domain.xmin + x0 * w - eps_x
        xmax = math.inf if x1 == _Q - 1 else domain.xmin + (x1 + 1) * w + eps_x
        ymin = -math.inf if y0 == 0 else domain.ymin + y0 * h - eps_y
        ymax = math.inf if y1 == _Q - 1 else domain.ymin + (y1 + 1) * h + eps_y
        return Rect(xmin, ymin, xmax, ymax)


def rect_distance(r: Rect, x: float, y: float) -> float:
    """Euclidean distance from a point to a rectangle (0 inside)."""
    dx = max(r.xmin - x, 0.0, x - r.xmax)
    dy = max(r.ymin - y, 0.0, y - r.ymax)
    return math.hypot(dx, dy)


def decompose(query: Rect, domain: Rect = DEFAULT_DOMAIN, max_intervals: int = MAX_INTERVALS):
    """Sorted, merged z-intervals (at most ``max_intervals``) covering ``query``."""
    qx, qy = quantize([query.xmin, query.xmax], [query.ymin, query.ymax], domain)
    bx0, bx1, by0, by1 = int(qx[0]), int(qx[1]), int(qy[0]), int(qy[1])

    def relation(c: Cell):
        x0, x1, y0, y1 = c.q_range()
        if x1 < bx0 or x0 > bx1 or y1 < by0 or y0 > by1:
            return 0
        if bx0 <= x0 and x1 <= bx1 and by0 <= y0 and y1 <= by1:
            return 2
        return 1

    full: list[Cell] = []
    partial = [Cell(0, 0, 0)]
    while partial:
        kids = [k for c in partial if c.level < 32 for k in c.children()]
        rel = [(k, relation(k)) for k in kids]
        nf = [k for k, r in rel if r == 2]
        np_ = [k for k, r in rel if r == 1]
        if not kids or len(full) + len(nf) + len(np_) > max_intervals:
            break
        full += nf
        partial = np_
    ranges = sorted(c.z_range() for c in full + partial)
    merged: list[list[int]] = []
    for lo, hi in ranges:
        if merged and lo <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [tuple(r) for r in merged]


# -- build / read ----------------------------------------------------------------------


@dataclass
class SpatialSummary:
    count: int
    mbr: Rect | None

    def overlaps(self, region: Rect) -> bool:
        return self.count > 0 and self.mbr is not None and self.mbr.intersects(region)


@dataclass
class SpatialRoot:
    count: int
    mbr: Rect | None
    domain: Rect
    leaves: list  # (first z, last z, handle, count)
    firsts: np.ndarray
    lasts: np.ndarray


def _leaf_layout(keys) -> EntryLayout:
    return EntryLayout([("z", "<u8"), ("x", "<f8"), ("y", "<f8")], HANDLE_FIELDS, keys)


def build(writer, keys_codec, rows_keys: list, geoms: list, handles: list, domain: Rect = DEFAULT_DOMAIN):
    idx = [i for i, g in enumerate(geoms) if isinstance(g, Point)]
    xs = np.array([geoms[i].x for i in idx], dtype=np.float64)
    ys = np.array([geoms[i].y for i in idx], dtype=np.float64)
    z = zorder_encode_many(xs, ys, domain) if idx else np.zeros(0, dtype=np.uint64)
    keys = [rows_keys[i] for i in idx]
    if keys_codec.kind == "int64":
        karr = np.array(keys, dtype=np.int64)
        order = np.lexsort((karr, z))
    else:
        rank = {k: r for r, k in enumerate(sorted(keys))}
        order = np.lexsort((np.array([rank[k] for k in keys], dtype=np.int64), z))
        karr = keys
    offs = np.array([handles[i].offset for i in idx], dtype=np.uint64)
    lens = np.array([handles[i].length for i in idx], dtype=np.uint32)
    layout = _leaf_layout(keys_codec)
    leaves = []
    per = LEAF_TARGET_BYTES // (24 + 10 + 12)
    for a, b in chunk_ranges(len(idx), per):
        sel = order[a:b]
        kcol = karr[sel] if isinstance(karr, np.ndarray) else [karr[i] for i in sel]
        cols = {"z": z[sel], "x": xs[sel], "y": ys[sel], "key": kcol, "off": offs[sel], "len": lens[sel]}
        h = writer.add_block(layout.encode(cols, len(sel)))
        leaves.append((int(z[sel[0]]), int(z[sel[-1]]), h, len(sel)))
    mbr = Rect(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())) if idx else None
    head = _ROOT_HEAD.pack(TAG, len(idx), 1 if mbr else 0, *(mbr or (0.0,) * 4), *domain, len(leaves))
    parts = [head]
    for first, last, h, n in leaves:
        parts.append(struct.pack("<QQ", first, last) + pack_handle(h.offset, h.length) + struct.pack("<I", n))
    root = writer.add_block(b"".join(parts))
    return root, SpatialSummary(len(idx), mbr)


def decode_root(payload: bytes, segment_id: int) -> SpatialRoot:
    tag, count, has, *rest = _ROOT_HEAD.unpack_from(payload, 0)
    assert tag == TAG
    mbr = Rect(*rest[0:4]) if has else None
    domain = Rect(*rest[4:8])
    n = rest[8]
    pos = _ROOT_HEAD.size
    leaves = []
    for _ in range(n):
        first, last = struct.unpack_from("<QQ", payload, pos)
        off, ln = unpack_handle(payload, pos + 16)
        (c,) = struct.unpack_from("<I", payload, pos + 28)
        pos += 32
        leaves.append((first, last, BlockHandle(segment_id, off, ln), c))
    firsts = np.array([l[0] for l in leaves], dtype=np.uint64)
    lasts = np.array([l[1] for l in leaves], dtype=np.uint64)
    return SpatialRoot(count, mbr, domain, leaves, firsts, lasts)


def read_root(segment, root_handle) -> SpatialRoot:
    return segment.read_decoded(root_handle, "spatial_root", lambda p: decode_root(p, segment.segment_id))


def load_summary(segment, root_handle) -> SpatialSummary:
    r = read_root(segment, root_handle)
    return SpatialSummary(r.count, r.mbr)


def _read_leaf(segment, h: BlockHandle) -> dict:
    layout = _leaf_layout(segment.codec.keys)
    return segment.read_decoded(h, "spatial_leaf", lambda p: layout.decode(p)[0])


def _leaves_overlapping(root: SpatialRoot, lo: int, hi: int) -> range:
    # leaves are sorted by z with non-decreasing first/last keys
    a = int(np.searchsorted(root.lasts, np.uint64(lo), side="left"))
    b = int(np.searchsorted(root.firsts, np.uint64(hi), side="right"))
    return range(a, b)


def _hits(segment, cols, sel, dists=None) -> list[Hit]:
    sid = segment.segment_id
    keys = cols["key"]
    offs, lens = cols["off"], cols["len"]
    out = []
    for j, i in enumerate(sel):
        k = keys[i]
        k = k.item() if hasattr(k, "item") else k
        out.append(Hit(k, 0.0 if dists is None else float(dists[j]), BlockHandle(sid, int(offs[i]), int(lens[i])), sid))
    return out


def range_filter(segment, root_handle, region) -> list[Hit]:
    """Rows whose point lies inside ``region`` (Rect or Polygon)."""
    root = read_root(segment, root_handle)
    bbox = region.bbox()
    if root.count == 0 or root.mbr is None or not root.mbr.intersects(bbox):
        return []
    seen_leaves = set()
    out: list[Hit] = []
    for lo, hi in decompose(bbox, root.domain):
        for li in _leaves_overlapping(root, lo, hi):
            cols = _read_leaf(segment, root.leaves[li][2])
            z = cols["z"]
            a = int(np.searchsorted(z, np.uint64(lo), side="left"))
            b = int(np.searchsorted(z, np.uint64(hi), side="right"))
            if a >= b:
                continue
            sl = np.arange(a, b)
            inside = region.contains_points(cols["x"][sl], cols["y"][sl])
            out.extend(_hits(segment, cols, sl[inside]))
            seen_leaves.add(li)
    return out


def leaves_for_region(segment, root_handle, region) -> int:
    root = read_root(segment, root_handle)
    bbox = region.bbox()
    if root.count == 0 or root.mbr is None or not root.mbr.intersects(bbox):
        return 0
    s = set()
    for lo, hi in decompose(bbox, root.domain):
        s.update(_leaves_overlapping(root, lo, hi))
    return len(s)


def _key_order(k):
    return (0, k) if isinstance(k, int) else (1, str(k))


def nearest_hits(segment, root_handle, q):
    """Best-first search: hits in exact ``(distance, key)`` order."""
    root = read_root(segment, root_handle)
    if root.count == 0:
        return
    qx, qy = float(q[0]), float(q[1])
    tie = itertools.count()
    heap = [(0.0, 0, (0,), next(tie), Cell(0, 0, 0))]
    while heap:
        d, kind, _, _, item = heapq.heappop(heap)
        if kind == 1:
            yield item
            continue
        cell: Cell = item
        lo, hi = cell.z_range()
        leaves = _leaves_overlapping(root, lo, hi)
        if len(leaves) == 0:
            continue
        if cell.level == 32 or len(leaves) <= 1:
            for li in leaves:
                cols = _read_leaf(segment, root.leaves[li][2])
                z = cols["z"]
                a = int(np.searchsorted(z, np.uint64(lo), side="left"))
                b = int(np.searchsorted(z, np.uint64(hi), side="right"))
                if a >= b:
                    continue
                sl = np.arange(a, b)
                dist = np.hypot(cols["x"][sl] - qx, cols["y"][sl] - qy)
                for h in _hits(segment, cols, sl, dist):
                    heapq.heappush(heap, (h.distance, 1, _key_order(h.key), next(tie), h))
            continue
        for child in cell.children():
            clo, chi = child.z_range()
            if len(_leaves_overlapping(root, clo, chi)) == 0:
                continue
            lb = rect_distance(child.rect(root.domain), qx, qy)
            heapq.heappush(heap, (lb, 0, (0,), next(tie), child))


def segment_iterator(segment, column: str, root_handle, q) -> LazySortedIterator:
    it = LazySortedIterator(lambda: nearest_hits(segment, root_handle, q), contains=segment.keys.__contains__)
    summary = segment.index_summaries.get(column)
    if summary is not None:
        it.lower_bound = rect_distance(summary.mbr, float(q[0]), float(q[1])) if summary.mbr else math.inf
    return it
