"""Threshold-style top-k aggregation over sorted distance streams.

Each source ``j`` yields objects in non-decreasing distance ``d_j``; the score
of an object is ``s(o) = sum_j w_j * d_j(o)`` and the ``k`` lowest scores win.
Sources are drained round-robin, one item each per round.  For every seen
object we keep

* ``LB[o] = sum_{j seen} w_j d_j(o) + sum_{j unseen} w_j tau_j``, where
  ``tau_j`` is the last distance source ``j`` emitted (no unseen object can
  be closer than that), and
* ``UB[o] = sum_{j seen} w_j d_j(o) + sum_{j unseen} w_j D_j``, where ``D_j``
  is the largest distance source ``j`` can produce (infinite unless the
  source declares ``max_distance``).

The loop stops once the ``k`` objects with the smallest upper bounds are
strictly better than the lower bound of every other seen object and of the
virtual unseen object ``sum_j w_j tau_j``.  In ``refine`` mode the ``k``
lowest-LB objects are completed by random access each round, which makes
their bounds exact and terminates much sooner; ``faithful`` mode never does
random access and returns the candidate pool ordered by lower bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from mmdb.index.base import SortedDistanceIterator


@dataclass
class NraResult:
    items: list  # [(key, score)] best first
    consumed: list  # entries drawn per source
    rounds: int = 0
    random_accesses: int = 0
    exact: bool = True

    @property
    def keys(self) -> list:
        return [k for k, _ in self.items]

    @property
    def total_consumed(self) -> int:
        return sum(self.consumed)


@dataclass
class NraState:
    """Per-object partial distances plus the per-source thresholds."""

    weights: np.ndarray
    keys: list = field(default_factory=list)
    index: dict = field(default_factory=dict)
    dist: np.ndarray = None  # (capacity, l) with NaN for unseen
    exact: np.ndarray = None  # (capacity,) exact score or NaN
    tau: np.ndarray = None
    exhausted: np.ndarray = None
    missing: list = None  # per source: missing_distance or None
    max_distance: list = None

    def __post_init__(self):
        l = len(self.weights)
        if self.dist is None:
            self.dist = np.full((64, l), np.nan)
            self.exact = np.full(64, np.nan)
        if self.tau is None:
            self.tau = np.zeros(l)
            self.exhausted = np.zeros(l, dtype=bool)
        if self.missing is None:
            self.missing = [None] * l
        if self.max_distance is None:
            self.max_distance = [math.inf] * l

    @property
    def n(self) -> int:
        return len(self.keys)

    def _slot(self, key) -> int:
        i = self.index.get(key)
        if i is None:
            i = len(self.keys)
            if i >= len(self.dist):
                grow = len(self.dist)
                self.dist = np.vstack([self.dist, np.full((grow, self.dist.shape[1]), np.nan)])
                self.exact = np.concatenate([self.exact, np.full(grow, np.nan)])
            self.keys.append(key)
            self.index[key] = i
        return i

    def observe(self, j: int, key, distance: float):
        """Record ``d_j(key)`` and advance ``tau_j``; the object's bounds follow."""
        i = self._slot(key)
        self.dist[i, j] = distance
        self.tau[j] = max(self.tau[j], distance)

    def set_exact(self, key, distances: Sequence[float]):
        i = self._slot(key)
        d = np.asarray(distances, dtype=np.float64)
        self.dist[i] = d
        self.exact[i] = _weighted(d, self.weights)

    def mark_exhausted(self, j: int):
        self.exhausted[j] = True

    def _fill(self, upper: bool) -> np.ndarray:
        out = np.empty(len(self.weights))
        for j in range(len(self.weights)):
            if self.exhausted[j]:
                m = self.missing[j]
                out[j] = m if m is not None else self.tau[j]
            elif upper:
                out[j] = self.max_distance[j]
            else:
                out[j] = self.tau[j]
        return out

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """``(LB, UB)`` arrays aligned with ``keys``."""
        n = self.n
        d = self.dist[:n]
        seen = ~np.isnan(d)
        lo = np.where(seen, d, self._fill(False)[None, :])
        hi = np.where(seen, d, self._fill(True)[None, :])
        lb = _weighted_rows(lo, self.weights)
        ub = _weighted_rows(hi, self.weights)
        ex = self.exact[:n]
        has = ~np.isnan(ex)
        lb[has] = ex[has]
        ub[has] = ex[has]
        return lb, ub

    def bounds_of(self, key) -> tuple[float, float]:
        lb, ub = self.bounds()
        i = self.index[key]
        return float(lb[i]), float(ub[i])

    def unseen_lower_bound(self) -> float:
        """LB of any object no source has yielded yet."""
        total = 0.0
        for j, w in enumerate(self.weights):
            if w == 0:
                continue
            if self.exhausted[j]:
                m = self.missing[j]
                total += w * (m if m is not None else math.inf)
            else:
                total += w * self.tau[j]
        return total


def update_bounds(state: NraState, key) -> tuple[float, float]:
    """Current ``(LB, UB)`` of ``key``; bounds are derived from the state on demand."""
    return state.bounds_of(key)


def _weighted(d: np.ndarray, w: np.ndarray) -> float:
    return float(_weighted_rows(d[None, :], w)[0])


def _weighted_rows(d: np.ndarray, w: np.ndarray) -> np.ndarray:
    # zero weights contribute nothing even for infinite distances
    with np.errstate(invalid="ignore"):
        prod = d * w[None, :]
    prod[:, w == 0] = 0.0
    return prod.sum(axis=1)


def _key_order(key):
    return (0, key) if isinstance(key, (int, np.integer)) else (1, str(key))


def _smallest(values: np.ndarray, keys: list, k: int, tiebreak: np.ndarray | None = None) -> np.ndarray:
    """Indices of the ``k`` smallest values; ties broken by ``tiebreak`` then key."""
    n = len(values)
    if n > k:
        kth = np.partition(values, k - 1)[k - 1]
        idx = np.nonzero(values <= kth)[0]
    else:
        idx = np.arange(n)
    tb = tiebreak if tiebreak is not None else values
    order = sorted(idx.tolist(), key=lambda i: (values[i], tb[i], _key_order(keys[i])))
    return np.array(order[:k], dtype=np.int64)


def nra_topk(iterators: Sequence[SortedDistanceIterator], weights: Sequence[float], k: int,
             mask: Callable[[Any], bool] | None = None, mode: str = "refine",
             fetch: Callable[[Any], Sequence[float] | None] | None = None,
             trace: Callable[[NraState], None] | None = None) -> NraResult:
    """Top-``k`` objects by ``sum_j weights[j] * d_j``.

    ``mask`` (a key predicate) drops yields before they touch the bounds.
    ``fetch(key)`` returns the exact per-source distances for random access
    (``None`` if the object is not eligible); it is required in refine mode.
    ``trace`` is called with the state after every round.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(iterators):
        raise ValueError("one weight per iterator")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and >= 0")
    refine = mode == "refine"
    if refine and fetch is None:
        raise ValueError("refine mode needs a fetch function")
    state = NraState(w, missing=[it.missing_distance for it in iterators],
                     max_distance=[getattr(it, "max_distance", math.inf) for it in iterators])
    active = [j for j in range(len(iterators)) if w[j] > 0]
    for j in range(len(iterators)):
        if w[j] == 0:
            state.mark_exhausted(j)  # never drawn; contributes zero either way
    consumed = [0] * len(iterators)
    dropped: set = set()  # found ineligible by random access
    ra = 0
    rounds = 0

    def draw(j: int) -> bool:
        it = iterators[j]
        while True:
            h = it.next()
            if h is None:
                state.mark_exhausted(j)
                return False
            consumed[j] += 1
            if (mask is not None and not mask(h.key)) or h.key in dropped:
                state.tau[j] = max(state.tau[j], h.distance)
                continue
            state.observe(j, h.key, h.distance)
            return True

    while True:
        progressed = False
        for j in active:
            if not state.exhausted[j]:
                progressed |= draw(j)
        rounds += 1
        n = state.n
        if refine and n:
            ex = state.exact[:n]
            cand = np.nonzero(np.isnan(ex))[0]
            if len(cand):
                lb, _ = state.bounds()
                pick = cand[_smallest(lb[cand], [state.keys[i] for i in cand], k)]
                for i in pick:
                    key = state.keys[i]
                    d = fetch(key)
                    ra += 1
                    if d is None:
                        dropped.add(key)
                        state.exact[i] = math.inf
                    else:
                        state.set_exact(key, d)
        if trace is not None:
            trace(state)
        if not progressed:
            break
        live = _live(state, dropped)
        if len(live) < k:
            continue
        lb, ub = state.bounds()
        top = live[_smallest(ub[live], [state.keys[i] for i in live], k, tiebreak=lb[live])]
        worst = float(ub[top].max())
        # unseen keys are unknown, so they must lose strictly
        if not worst < state.unseen_lower_bound():
            continue
        if len(live) > k:
            others = np.setdiff1d(live, top, assume_unique=True)
            olb = lb[others]
            best_other = float(olb.min())
            if best_other < worst:
                continue
            if best_other == worst:
                # a seen object tied at the boundary loses only if its key sorts after every tied top key
                top_key = max(_key_order(state.keys[i]) for i in top if ub[i] == worst)
                if min(_key_order(state.keys[i]) for i in others[olb == worst]) < top_key:
                    continue
        break
    return _finish(state, k, refine, fetch, dropped, consumed, rounds, ra)


def _live(state: NraState, dropped: set) -> np.ndarray:
    n = state.n
    if not dropped:
        return np.arange(n)
    return np.array([i for i in range(n) if state.keys[i] not in dropped], dtype=np.int64)


def _finish(state: NraState, k: int, refine: bool, fetch, dropped: set, consumed, rounds, ra):
    live = _live(state, dropped)
    if len(live) == 0:
        return NraResult([], consumed, rounds, ra, refine)
    lb, ub = state.bounds()
    keys = [state.keys[i] for i in live]
    top = live[_smallest(ub[live], keys, k, tiebreak=lb[live])]
    if refine:
        out = []
        for i in top:
            key = state.keys[i]
            if np.isnan(state.exact[i]):
                d = fetch(key)
                ra += 1
                if d is None:
                    continue
                state.set_exact(key, d)
            out.append((key, float(state.exact[i])))
        out.sort(key=lambda t: (t[1], _key_order(t[0])))
        return NraResult(out[:k], consumed, rounds, ra, True)
    items = sorted(((state.keys[i], float(lb[i])) for i in top), key=lambda t: (t[1], _key_order(t[0])))
    exact = bool(all(lb[i] == ub[i] for i in top))
    return NraResult(items, consumed, rounds, ra, exact)


def brute_force_topk(scores: dict, k: int) -> list:
    """Reference ``k`` lowest ``(key, score)`` pairs, ties by key."""
    return sorted(scores.items(), key=lambda t: (t[1], _key_order(t[0])))[:k]
