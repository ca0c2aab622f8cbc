"""0/1 knapsack selection of view candidates under a storage budget."""

from __future__ import annotations

import math
from typing import Sequence

EXACT_LIMIT = 64
QUANTUM = 64 * 1024
MAX_FRONT = 1 << 16


def _pareto(benefits, sizes, budget: int):
    """Exact DP over the (storage, benefit) Pareto front; ``None`` if the front grows too large."""
    front = [(0, 0.0, 0)]  # (storage, benefit, chosen bitmask), storage ascending, benefit strictly ascending
    for i, (b, w) in enumerate(zip(benefits, sizes)):
        grown = [(s + w, v + b, m | (1 << i)) for s, v, m in front if s + w <= budget]
        merged = sorted(front + grown, key=lambda t: (t[0], -t[1], t[2]))
        front = []
        best = -math.inf
        for t in merged:
            if t[1] > best:
                front.append(t)
                best = t[1]
        if len(front) > MAX_FRONT:
            return None
    s, v, m = front[-1]
    return [i for i in range(len(benefits)) if m >> i & 1]


def _quantized(benefits, sizes, budget: int):
    """DP on storage rounded up to 64 KiB units; always within budget."""
    cap = budget // QUANTUM
    units = [math.ceil(w / QUANTUM) for w in sizes]
    best = [0.0] * (cap + 1)
    choice = [[False] * (cap + 1) for _ in benefits]
    for i, (b, u) in enumerate(zip(benefits, units)):
        for c in range(cap, u - 1, -1):
            cand = best[c - u] + b
            if cand > best[c]:
                best[c] = cand
                choice[i][c] = True
    out, c = [], cap
    for i in range(len(benefits) - 1, -1, -1):
        if choice[i][c]:
            out.append(i)
            c -= units[i]
    return sorted(out)


def _greedy(benefits, sizes, budget: int):
    order = sorted(range(len(benefits)),
                   key=lambda i: (-(benefits[i] / sizes[i]) if sizes[i] > 0 else -math.inf, i))
    used, out = 0, []
    for i in order:
        if benefits[i] > 0 and used + sizes[i] <= budget:
            out.append(i)
            used += sizes[i]
    return sorted(out)


def select_views(benefits: Sequence[float], sizes: Sequence[int], budget: int) -> list[int]:
    """Indices of the chosen candidates; total size never exceeds ``budget``.

    Up to 64 candidates are solved exactly, larger pools greedily by benefit per byte.
    """
    sizes = [int(s) for s in sizes]
    benefits = [max(0.0, float(b)) for b in benefits]
    budget = int(budget)
    if budget <= 0 or not benefits:
        return []
    if len(benefits) <= EXACT_LIMIT:
        out = _pareto(benefits, sizes, budget)
        return out if out is not None else _quantized(benefits, sizes, budget)
    return _greedy(benefits, sizes, budget)


def brute_force(benefits, sizes, budget: int) -> float:
    """Best total benefit over every subset (reference for small inputs)."""
    n = len(benefits)
    best = 0.0
    for m in range(1 << n):
        s = sum(sizes[i] for i in range(n) if m >> i & 1)
        if s <= budget:
            best = max(best, sum(benefits[i] for i in range(n) if m >> i & 1))
    return best
