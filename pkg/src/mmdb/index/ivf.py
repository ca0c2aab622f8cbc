"""Per-segment IVF vector index with block-level access.

Root (centroid metadata) block::

    tag u8 = 1 | dim u32 | null_count u32 |
    count u32 | (dim x f32 centroid | posting handle u64,u32 | length u32)* |
    count x f64 cell radius

Posting block: ``count u32 | (dim x f32 vector | key | handle u64,u32)*``.
A cell radius is the largest member-to-centroid distance, which both bounds
threshold probes and gives the per-segment lower bound used for pruning.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from mmdb.index.base import Hit, LazySortedIterator
from mmdb.index.layout import HANDLE_FIELDS, EntryLayout
from mmdb.storage.blocks import BlockHandle

TAG = 1
MAX_ITER = 20
REL_TOL = 1e-4
_RADIUS_SLACK = 1e-6


def l2_distances(vectors: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Euclidean distances, computed in float64; the single distance routine used everywhere."""
    diff = np.asarray(vectors, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def l2(a, b) -> float:
    return float(l2_distances(np.asarray(a)[None, :], b)[0])


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    xx = np.einsum("ij,ij->i", x, x)[:, None]
    cc = np.einsum("ij,ij->i", c, c)[None, :]
    d = xx - 2.0 * (x @ c.T) + cc
    np.maximum(d, 0.0, out=d)
    return d


def assign(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid for each vector (lowest index on ties)."""
    if len(vectors) == 0:
        return np.zeros(0, dtype=np.int64)
    x = np.asarray(vectors, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    out = np.empty(len(x), dtype=np.int64)
    step = max(1, 2_000_000 // max(1, len(c)))
    for a in range(0, len(x), step):
        out[a : a + step] = np.argmin(_sq_dists(x[a : a + step], c), axis=1)
    return out


def train_centroids(vectors: np.ndarray, n_centroids: int, seed: int = 0,
                    max_iter: int = MAX_ITER, tol: float = REL_TOL) -> np.ndarray:
    """k-means (k-means++ seeding, Lloyd iterations).

    Returns ``min(n_centroids, distinct vectors)`` centroids as float32.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = len(x)
    if n == 0:
        return np.zeros((0, x.shape[1] if x.ndim == 2 else 0), dtype=np.float32)
    rng = np.random.default_rng(seed)
    centers = [x[rng.integers(n)]]
    d2 = np.einsum("ij,ij->i", x - centers[0], x - centers[0])
    while len(centers) < n_centroids:
        total = d2.sum()
        if total <= 0.0:
            break  # every vector coincides with a chosen center
        i = int(rng.choice(n, p=d2 / total))
        centers.append(x[i])
        diff = x - x[i]
        np.minimum(d2, np.einsum("ij,ij->i", diff, diff), out=d2)
    c = np.array(centers)
    prev = math.inf
    for _ in range(max_iter):
        d = _sq_dists(x, c)
        lab = np.argmin(d, axis=1)
        inertia = float(d[np.arange(n), lab].sum())
        counts = np.bincount(lab, minlength=len(c))
        sums = np.stack([np.bincount(lab, weights=x[:, j], minlength=len(c)) for j in range(x.shape[1])], axis=1)
        nonempty = counts > 0
        c[nonempty] = sums[nonempty] / counts[nonempty, None]
        if prev < math.inf and (prev - inertia) <= tol * max(prev, 1e-300):
            break
        prev = inertia
    return c.astype(np.float32)


def default_n_probe(n_centroids: int) -> int:
    return max(1, math.ceil(n_centroids / 8))


@dataclass
class IvfSummary:
    """Global-index summary of one segment's IVF region."""

    centroids: np.ndarray  # (n, dim) float32
    radii: np.ndarray  # (n,) float64
    lengths: np.ndarray  # (n,) int
    count: int

    def cell_lower_bounds(self, q) -> np.ndarray:
        if len(self.centroids) == 0:
            return np.zeros(0)
        return np.maximum(0.0, l2_distances(self.centroids, q) - self.radii)

    def lower_bound(self, q) -> float:
        lbs = self.cell_lower_bounds(q)
        return float(lbs.min()) if len(lbs) else math.inf


@dataclass
class IvfRoot:
    dim: int
    null_count: int
    centroids: np.ndarray
    handles: list
    lengths: np.ndarray
    radii: np.ndarray

    @property
    def n_centroids(self) -> int:
        return len(self.centroids)


def _posting_layout(dim: int, keys) -> EntryLayout:
    return EntryLayout([("vec", "<f4", (dim,))], HANDLE_FIELDS, keys)


def build(writer, spec, dim: int, keys_codec, rows_keys: list, vectors: list, handles: list,
          seed: int = 0):
    """Train centroids, write posting blocks and the centroid metadata block."""
    present = [i for i, v in enumerate(vectors) if v is not None]
    null_count = len(vectors) - len(present)
    if present:
        V = np.stack([vectors[i] for i in present]).astype(np.float32)
    else:
        V = np.zeros((0, dim), dtype=np.float32)
    keys = [rows_keys[i] for i in present]
    hs = [handles[i] for i in present]
    centroids = train_centroids(V, spec.n_centroids, seed=seed)
    labels = assign(V, centroids)
    layout = _posting_layout(dim, keys_codec)
    offs = np.array([h.offset for h in hs], dtype=np.uint64)
    lens = np.array([h.length for h in hs], dtype=np.uint32)
    key_arr = np.array(keys, dtype=np.int64) if keys_codec.kind == "int64" else keys
    posting_handles = []
    lengths = []
    radii = []
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(len(centroids) + 1))
    for c in range(len(centroids)):
        idx = order[bounds[c] : bounds[c + 1]]
        if len(idx) == 0:
            posting_handles.append(BlockHandle(writer.segment_id, 0, 0))
            lengths.append(0)
            radii.append(0.0)
            continue
        if isinstance(key_arr, np.ndarray):
            kcol = key_arr[idx]
        else:
            kcol = [key_arr[i] for i in idx]
        cols = {"vec": V[idx], "key": kcol, "off": offs[idx], "len": lens[idx]}
        posting_handles.append(writer.add_block(layout.encode(cols, len(idx))))
        lengths.append(len(idx))
        r = float(l2_distances(V[idx], centroids[c]).max())
        radii.append(r * (1 + _RADIUS_SLACK) + _RADIUS_SLACK)
    parts = [struct.pack("<BIII", TAG, dim, null_count, len(centroids))]
    for c in range(len(centroids)):
        h = posting_handles[c]
        parts.append(centroids[c].astype("<f4").tobytes())
        parts.append(struct.pack("<QII", h.offset, h.length, lengths[c]))
    parts.append(np.array(radii, dtype="<f8").tobytes())
    root = writer.add_block(b"".join(parts))
    summary = IvfSummary(centroids, np.array(radii, dtype=np.float64), np.array(lengths), len(present))
    return root, summary


def decode_root(payload: bytes, segment_id: int) -> IvfRoot:
    tag, dim, null_count, n = struct.unpack_from("<BIII", payload, 0)
    assert tag == TAG
    rec = np.dtype([("c", "<f4", (dim,)), ("off", "<u8"), ("len", "<u4"), ("n", "<u4")])
    arr = np.frombuffer(payload, dtype=rec, count=n, offset=13)
    radii = np.frombuffer(payload, dtype="<f8", count=n, offset=13 + n * rec.itemsize)
    handles = [BlockHandle(segment_id, int(o), int(l)) for o, l in zip(arr["off"], arr["len"])]
    return IvfRoot(dim, null_count, arr["c"].copy(), handles, arr["n"].astype(np.int64), radii.copy())


def read_root(segment, root_handle) -> IvfRoot:
    return segment.read_decoded(root_handle, "ivf_root", lambda p: decode_root(p, segment.segment_id))


def load_summary(segment, root_handle) -> IvfSummary:
    r = read_root(segment, root_handle)
    return IvfSummary(r.centroids, r.radii, r.lengths, int(r.lengths.sum()))


def read_posting(segment, root: IvfRoot, cell: int) -> dict:
    h = root.handles[cell]
    if root.lengths[cell] == 0:
        return {"vec": np.zeros((0, root.dim), dtype=np.float32), "key": [], "off": np.zeros(0, np.uint64), "len": np.zeros(0, np.uint32)}
    layout = _posting_layout(root.dim, segment.codec.keys)
    return segment.read_decoded(h, "ivf_posting", lambda p: layout.decode(p)[0])


def probe_cells(root: IvfRoot, q, n_probe: int) -> np.ndarray:
    """The ``n_probe`` nearest non-empty cells (ties by cell index)."""
    if root.n_centroids == 0:
        return np.zeros(0, dtype=np.int64)
    n_probe = max(1, min(int(n_probe), root.n_centroids))
    d = l2_distances(root.centroids, q)
    order = np.lexsort((np.arange(len(d)), d))
    return order[:n_probe]


def _gather(segment, root: IvfRoot, cells, q):
    sid = segment.segment_id
    keys, dists, offs, lens = [], [], [], []
    for c in cells:
        p = read_posting(segment, root, int(c))
        if len(p["key"]) == 0:
            continue
        keys.extend(p["key"].tolist() if isinstance(p["key"], np.ndarray) else p["key"])
        dists.append(l2_distances(p["vec"], q))
        offs.append(p["off"])
        lens.append(p["len"])
    if not dists:
        return [], np.zeros(0), np.zeros(0, np.uint64), np.zeros(0, np.uint32)
    return keys, np.concatenate(dists), np.concatenate(offs), np.concatenate(lens)


def _check_dim(root: IvfRoot, q):
    from mmdb.errors import DimensionMismatchError

    q = np.asarray(q, dtype=np.float32)
    if q.ndim != 1 or q.shape[0] != root.dim:
        raise DimensionMismatchError(f"query has shape {q.shape}, index dim is {root.dim}")
    return q


def search_segment(segment, root_handle, q, n_probe: int, k: int) -> list[Hit]:
    """Exact top-``k`` among the vectors of the ``n_probe`` nearest cells."""
    root = read_root(segment, root_handle)
    q = _check_dim(root, q)
    if root.n_centroids == 0:
        return []
    keys, d, offs, lens = _gather(segment, root, probe_cells(root, q, n_probe), q)
    if not keys:
        return []
    order = _order(d, keys)[:k]
    sid = segment.segment_id
    return [Hit(keys[i], float(d[i]), BlockHandle(sid, int(offs[i]), int(lens[i])), sid) for i in order]


def _order(d: np.ndarray, keys: list) -> np.ndarray:
    if keys and isinstance(keys[0], int):
        return np.lexsort((np.asarray(keys, dtype=np.int64), d))
    rank = {k: i for i, k in enumerate(sorted(keys))}
    return np.lexsort((np.array([rank[k] for k in keys]), d))


def threshold_lookup(segment, root_handle, q, theta: float) -> list[Hit]:
    """Every indexed row within ``theta`` of ``q``: probes only cells whose ball can reach it."""
    root = read_root(segment, root_handle)
    q = _check_dim(root, q)
    if root.n_centroids == 0:
        return []
    lbs = np.maximum(0.0, l2_distances(root.centroids, q) - root.radii)
    cells = np.nonzero((lbs <= theta) & (root.lengths > 0))[0]
    keys, d, offs, lens = _gather(segment, root, cells, q)
    sid = segment.segment_id
    return [
        Hit(keys[i], float(d[i]), BlockHandle(sid, int(offs[i]), int(lens[i])), sid)
        for i in np.nonzero(d <= theta)[0]
    ]


def sorted_segment_hits(segment, root_handle, q, n_probe: int):
    """Generator of hits over the probed cells in ``(distance, key)`` order."""
    root = read_root(segment, root_handle)
    q = _check_dim(root, q)
    if root.n_centroids == 0:
        return
    keys, d, offs, lens = _gather(segment, root, probe_cells(root, q, n_probe), q)
    sid = segment.segment_id
    for i in _order(d, keys):
        yield Hit(keys[i], float(d[i]), BlockHandle(sid, int(offs[i]), int(lens[i])), sid)


def segment_iterator(segment, column: str, root_handle, q, n_probe: int) -> LazySortedIterator:
    """Lazy per-segment iterator; ``lower_bound`` lets the merge defer opening it."""
    it = LazySortedIterator(lambda: sorted_segment_hits(segment, root_handle, q, n_probe),
                            contains=segment.keys.__contains__)
    summary = segment.index_summaries.get(column)
    if summary is not None and len(summary.centroids):
        n = max(1, min(int(n_probe), len(summary.centroids)))
        d = l2_distances(summary.centroids, q)
        cells = np.lexsort((np.arange(len(d)), d))[:n]
        it.lower_bound = float(np.maximum(0.0, d[cells] - summary.radii[cells]).min())
    elif summary is not None:
        it.lower_bound = math.inf
    return it
