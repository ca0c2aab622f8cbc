"""Grouping of registered queries into shared view candidates."""

from __future__ import annotations

import numpy as np

from mmdb.types import Rect

MERGE_AREA_FACTOR = 2.0
EPS_SAMPLE = 256
EPS_FACTOR = 0.5


def _rect_arrays(rects):
    a = np.array([[r.xmin, r.ymin, r.xmax, r.ymax] for r in rects], dtype=np.float64)
    return a.reshape(-1, 4)


def cluster_regions(regions, factor: float = MERGE_AREA_FACTOR) -> list[list[int]]:
    """Agglomerative clustering of query regions.

    The pair of clusters whose union rectangles have the closest centers is
    merged, as long as the union rectangle's area is at most ``factor`` times
    the summed member areas.  Returns member index lists ordered by first member.
    """
    rects = [r.bbox() for r in regions]
    if not rects:
        return []
    box = _rect_arrays(rects)
    members: list[list[int]] = [[i] for i in range(len(rects))]
    area_sum = (box[:, 2] - box[:, 0]) * (box[:, 3] - box[:, 1])
    alive = np.ones(len(rects), dtype=bool)
    while alive.sum() > 1:
        idx = np.nonzero(alive)[0]
        b = box[idx]
        cx = (b[:, 0] + b[:, 2]) / 2
        cy = (b[:, 1] + b[:, 3]) / 2
        dist = np.hypot(cx[:, None] - cx[None, :], cy[:, None] - cy[None, :])
        ux = np.maximum(b[:, None, 2], b[None, :, 2]) - np.minimum(b[:, None, 0], b[None, :, 0])
        uy = np.maximum(b[:, None, 3], b[None, :, 3]) - np.minimum(b[:, None, 1], b[None, :, 1])
        union = ux * uy
        s = area_sum[idx]
        ok = union <= factor * (s[:, None] + s[None, :]) + 1e-12
        np.fill_diagonal(ok, False)
        if not ok.any():
            break
        d = np.where(ok, dist, np.inf)
        flat = int(np.argmin(d))  # first (i, j) on ties
        i, j = idx[flat // len(idx)], idx[flat % len(idx)]
        i, j = min(i, j), max(i, j)
        box[i] = [min(box[i, 0], box[j, 0]), min(box[i, 1], box[j, 1]),
                  max(box[i, 2], box[j, 2]), max(box[i, 3], box[j, 3])]
        area_sum[i] += area_sum[j]
        members[i] = sorted(members[i] + members[j])
        alive[j] = False
    out = [members[i] for i in np.nonzero(alive)[0]]
    return sorted(out, key=lambda m: m[0])


def union_rect(regions) -> Rect:
    boxes = [r.bbox() for r in regions]
    out = boxes[0]
    for b in boxes[1:]:
        out = out.union(b)
    return out


def default_epsilon(vectors: np.ndarray, seed: int = 0) -> float:
    """Half the mean pairwise L2 distance over a sample of at most 256 queries."""
    v = np.asarray(vectors, dtype=np.float64)
    if len(v) < 2:
        return 0.0
    if len(v) > EPS_SAMPLE:
        v = v[np.random.default_rng(seed).choice(len(v), EPS_SAMPLE, replace=False)]
    d = np.sqrt(np.maximum(0.0, ((v[:, None, :] - v[None, :, :]) ** 2).sum(-1)))
    n = len(v)
    return EPS_FACTOR * float(d.sum() / (n * (n - 1)))


def cluster_vectors(vectors, eps: float | None = None, seed: int = 0) -> list[list[int]]:
    """Greedy leader clustering: each query joins the nearest leader within ``eps``."""
    v = np.asarray(vectors, dtype=np.float64)
    if len(v) == 0:
        return []
    if eps is None:
        eps = default_epsilon(v, seed)
    leaders: list[int] = []
    members: list[list[int]] = []
    for i in range(len(v)):
        if leaders:
            d = np.sqrt(((v[leaders] - v[i]) ** 2).sum(-1))
            j = int(np.argmin(d))
            if d[j] <= eps:
                members[j].append(i)
                continue
        leaders.append(i)
        members.append([i])
    return members
