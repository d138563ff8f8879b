"""Independent brute-force oracles used by several test modules."""

import itertools


def brute_force_matching(edges):
    """(cardinality, cost) of the best max-cardinality min-cost matching by
    exhaustive enumeration of edge subsets."""
    best = (0, 0.0)
    edges = list(edges)
    for size in range(len(edges), 0, -1):
        found = None
        for subset in itertools.combinations(edges, size):
            ls = {u for u, _, _ in subset}
            rs = {v for _, v, _ in subset}
            if len(ls) == size and len(rs) == size:
                c = sum(w for _, _, w in subset)
                if found is None or c < found:
                    found = c
        if found is not None:
            return size, found
    return best
