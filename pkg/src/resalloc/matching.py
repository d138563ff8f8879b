"""Minimum-cost maximum-cardinality bipartite matching over an edge list."""

from __future__ import annotations

from typing import Hashable, Iterable

import numpy as np
from scipy.optimize import linear_sum_assignment


def min_cost_matching(edges: Iterable[tuple[Hashable, Hashable, float]]) -> list[tuple[Hashable, Hashable]]:
    """Match left to right nodes using only the given edges.

    Among all matchings of maximum cardinality, returns one of minimum total
    cost. Missing edges are priced above the cost of any feasible matching,
    so the solver never trades a real edge for a cheaper total.

    Args:
        edges: ``(left, right, cost)`` triples with finite, non-negative costs.
            Duplicate pairs keep the cheapest cost.

    Returns:
        Matched ``(left, right)`` pairs ordered by left-node first appearance.
    """
    best: dict[tuple, float] = {}
    lefts: dict[Hashable, int] = {}
    rights: dict[Hashable, int] = {}
    for u, v, c in edges:
        c = float(c)
        if not np.isfinite(c) or c < 0:
            raise ValueError(f"edge ({u}, {v}) has invalid cost {c}")
        lefts.setdefault(u, len(lefts))
        rights.setdefault(v, len(rights))
        if (u, v) not in best or c < best[(u, v)]:
            best[(u, v)] = c
    if not best:
        return []
    n, m = len(lefts), len(rights)
    # one missing edge must cost more than any complete set of real edges
    big = (sum(best.values()) + 1.0) * (min(n, m) + 1)
    cost = np.full((n, m), big)
    for (u, v), c in best.items():
        cost[lefts[u], rights[v]] = c
    rows, cols = linear_sum_assignment(cost)
    left_of = list(lefts)
    right_of = list(rights)
    out = [(left_of[i], right_of[j]) for i, j in zip(rows, cols) if cost[i, j] < big]
    return sorted(out, key=lambda p: lefts[p[0]])
