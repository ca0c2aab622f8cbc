"""Shared index contracts: candidate sets and sorted-distance iterators."""

from __future__ import annotations

import heapq
import itertools
from typing import Any, Callable, Iterable, Iterator, NamedTuple

from mmdb.storage.blocks import BlockHandle

MEMTABLE_SOURCE = -1  # source id used for rows still in a memtable


class Hit(NamedTuple):
    key: Any
    distance: float
    handle: BlockHandle | None
    source: int = MEMTABLE_SOURCE


def pack_position(segment_ordinal: int, row_ordinal: int) -> int:
    """64-bit row position: 32-bit segment ordinal, 32-bit row ordinal."""
    if not (0 <= segment_ordinal < 2**32 and 0 <= row_ordinal < 2**32):
        raise ValueError("position component out of range")
    return (segment_ordinal << 32) | row_ordinal


def unpack_position(pos: int) -> tuple[int, int]:
    return pos >> 32, pos & 0xFFFFFFFF


class CandidateSet:
    """Row positions surviving an index lookup.

    A position is ``(source, key)``: the segment id (or ``MEMTABLE_SOURCE``)
    holding a particular row version, and that row's primary key.  Each
    position maps to the data-block handle where the row lives.
    """

    __slots__ = ("_positions",)

    def __init__(self, positions: dict | None = None):
        self._positions: dict = positions if positions is not None else {}

    @classmethod
    def from_hits(cls, hits: Iterable[Hit]) -> "CandidateSet":
        return cls({(h.source, h.key): h.handle for h in hits})

    def add(self, source: int, key, handle: BlockHandle | None):
        self._positions[(source, key)] = handle

    def __len__(self):
        return len(self._positions)

    def __contains__(self, pos):
        return pos in self._positions

    def __iter__(self):
        return iter(sorted(self._positions, key=_pos_order))

    def __eq__(self, other):
        return isinstance(other, CandidateSet) and self._positions.keys() == other._positions.keys()

    def positions(self) -> set:
        return set(self._positions)

    def handle(self, pos) -> BlockHandle | None:
        return self._positions[pos]

    def items(self):
        return self._positions.items()

    def keys(self) -> set:
        return {k for _, k in self._positions}

    def intersect(self, other: "CandidateSet") -> "CandidateSet":
        a, b = self._positions, other._positions
        if len(a) > len(b):
            a, b = b, a
        return CandidateSet({p: h for p, h in a.items() if p in b})

    def union(self, other: "CandidateSet") -> "CandidateSet":
        out = dict(self._positions)
        out.update(other._positions)
        return CandidateSet(out)

    __and__ = intersect
    __or__ = union

    def by_source(self) -> dict:
        out: dict = {}
        for (src, key), h in self._positions.items():
            out.setdefault(src, []).append((key, h))
        return out

    def __repr__(self):
        return f"CandidateSet({len(self)} positions)"


def _pos_order(pos):
    return (pos[0], pos[1])


class SortedDistanceIterator:
    """Yields :class:`Hit` in non-decreasing distance; each key at most once.

    ``last_emitted`` is the distance of the latest yield (0.0 before the first
    one).  ``missing_distance``, when not ``None``, is the exact distance of
    every object the iterator never yields (e.g. documents without any query
    term); otherwise unseen objects are only known to be at or beyond
    ``last_emitted``.
    """

    missing_distance: float | None = None

    def __init__(self):
        self.last_emitted = 0.0
        self.consumed = 0
        self.exhausted = False

    def __iter__(self) -> Iterator[Hit]:
        return self

    def __next__(self) -> Hit:
        if self.exhausted:
            raise StopIteration
        try:
            hit = self._advance()
        except StopIteration:
            self.exhausted = True
            raise
        assert hit.distance >= self.last_emitted - 1e-12, "non-monotone iterator"
        self.last_emitted = hit.distance
        self.consumed += 1
        return hit

    def next(self) -> Hit | None:
        """``Next()``: the next hit, or ``None`` once exhausted."""
        try:
            return self.__next__()
        except StopIteration:
            return None

    def _advance(self) -> Hit:
        raise NotImplementedError

    def contains(self, key) -> bool:
        """Whether this source holds any version (incl. tombstone) of ``key``."""
        return False


class ListIterator(SortedDistanceIterator):
    """Iterator over pre-computed hits, sorted by ``(distance, key)``."""

    def __init__(self, hits: Iterable[Hit], contains: Callable[[Any], bool] | None = None,
                 missing_distance: float | None = None, presorted: bool = False):
        super().__init__()
        hits = list(hits)
        if not presorted:
            hits.sort(key=lambda h: (h.distance, h.key))
        self._hits = hits
        self._i = 0
        self._contains = contains
        self.missing_distance = missing_distance

    def _advance(self) -> Hit:
        if self._i >= len(self._hits):
            raise StopIteration
        h = self._hits[self._i]
        self._i += 1
        return h

    def contains(self, key) -> bool:
        if self._contains is not None:
            return self._contains(key)
        return any(h.key == key for h in self._hits)


class LazySortedIterator(SortedDistanceIterator):
    """Wraps a zero-arg factory; the underlying iterator is opened on first use."""

    def __init__(self, factory: Callable[[], Iterator[Hit]], contains: Callable[[Any], bool],
                 missing_distance: float | None = None):
        super().__init__()
        self._factory = factory
        self._it: Iterator[Hit] | None = None
        self._contains = contains
        self.missing_distance = missing_distance

    def _advance(self) -> Hit:
        if self._it is None:
            self._it = iter(self._factory())
        return next(self._it)

    def contains(self, key) -> bool:
        return self._contains(key)


class MergedIterator(SortedDistanceIterator):
    """Priority-queue merge of per-source iterators.

    ``iters`` are given newest source first.  A hit from source ``i`` is only
    emitted when no newer source ``j < i`` holds a version of the same key,
    so each key surfaces once, as its newest version.
    """

    def __init__(self, iters: list[SortedDistanceIterator], missing_distance: float | None = None):
        super().__init__()
        self._iters = list(iters)
        self._heap: list = []
        self._tie = itertools.count()
        self._emitted: set = set()
        self.missing_distance = missing_distance
        for i, it in enumerate(self._iters):
            lb = getattr(it, "lower_bound", None)
            if lb is not None and it.consumed == 0:
                # open lazily: nothing from this source can precede its lower bound
                heapq.heappush(self._heap, (lb, (-1,), i, next(self._tie), None))
            else:
                self._push(i)

    def _push(self, i: int):
        h = self._iters[i].next()
        if h is not None:
            heapq.heappush(self._heap, (h.distance, _key_order(h.key), i, next(self._tie), h))

    def _shadowed(self, i: int, key) -> bool:
        return any(self._iters[j].contains(key) for j in range(i))

    def _advance(self) -> Hit:
        while self._heap:
            _, _, i, _, h = heapq.heappop(self._heap)
            self._push(i)
            if h is None:
                continue
            if h.key in self._emitted or self._shadowed(i, h.key):
                continue
            self._emitted.add(h.key)
            return h
        raise StopIteration

    def contains(self, key) -> bool:
        return any(it.contains(key) for it in self._iters)


def _key_order(key):
    # int and str keys never mix within one table; tuple keeps heap comparisons total
    return (0, key) if isinstance(key, (int, float)) else (1, str(key))


def merge_sorted_iterators(iters: list[SortedDistanceIterator],
                           missing_distance: float | None = None) -> SortedDistanceIterator:
    """Globally non-decreasing merge of ``iters`` (newest source first), deduplicated by key."""
    if len(iters) == 1 and missing_distance is None:
        return iters[0]
    return MergedIterator(iters, missing_distance)
