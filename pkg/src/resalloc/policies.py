"""Policy interface and non-learning baselines (SPT, FIFO, Random, matching).

A policy is any object with ``decide(sim, assignments)`` returning either a
``(resource, instance)`` pair taken from ``assignments`` or ``None`` to
postpone. ``reset()`` is optional and called before every episode.

All baselines are work-conserving: they never postpone while an assignment
is possible. Ties are broken by (resource index, activity index, instance
creation), which is the iteration order of ``Assignments``.
"""

from __future__ import annotations

from typing import Optional, Protocol

import numpy as np

from .matching import min_cost_matching
from .sim import ActivityInstance, Assignments, Simulation

Decision = Optional[tuple[str, ActivityInstance]]


class Policy(Protocol):
    def decide(self, sim: Simulation, assignments: Assignments) -> Decision: ...


class SPTPolicy:
    """Pick the assignment with the lowest expected processing time."""

    name = "spt"

    def decide(self, sim, assignments):
        means = sim.model.service_means
        best = None
        best_mean = None
        for r, a, q in assignments.groups:
            m = means[(r, a)]
            if best_mean is None or m < best_mean:
                best, best_mean = (r, q), m
        if best is None:
            return None
        r, q = best
        return r, next(iter(q.values()))


class FIFOPolicy:
    """Serve the waiting instance of the oldest case that can be served now,
    on its fastest idle eligible resource."""

    name = "fifo"

    def decide(self, sim, assignments):
        model = sim.model
        servable: dict[str, list[str]] = {}
        for r, a, _ in assignments.groups:
            servable.setdefault(a, []).append(r)
        best_key, best_k = None, None
        for a, rs in servable.items():
            a_idx = model.activity_index(a)
            for k in sim.queues[a].values():
                key = (sim_case_arrival(sim, k), a_idx, k.created, k.id)
                if best_key is None or key < best_key:
                    best_key, best_k = key, k
        if best_k is None:
            return None
        rs = servable[best_k.activity]
        r = min(rs, key=lambda r: (model.mean(r, best_k.activity), model.resource_index(r)))
        return r, best_k


def sim_case_arrival(sim: Simulation, k: ActivityInstance) -> float:
    return sim.cases[k.case].arrival


class RandomPolicy:
    """Uniform choice over all possible assignments.

    With ``seed=None`` draws come from the simulation's policy stream;
    otherwise the policy owns a generator re-seeded on every ``reset``.
    """

    name = "random"

    def __init__(self, seed: int | None = None):
        self.seed = seed
        self.rng = None if seed is None else np.random.default_rng(seed)

    def reset(self):
        if self.seed is not None:
            self.rng = np.random.default_rng(self.seed)

    def decide(self, sim, assignments):
        n = len(assignments)
        if n == 0:
            return None
        rng = self.rng if self.rng is not None else sim.policy_rng
        return assignments.nth(int(rng.integers(n)))


class MatchingPolicy:
    """Per-decision min-cost maximum-cardinality matching of idle resources to
    waiting instances, costed by expected processing time.

    Matched pairs are emitted one per call; the matching is recomputed once
    the waiting set or the idle set differs from what the emitted pairs
    alone would leave behind.
    """

    name = "matching"

    def __init__(self):
        self.reset()

    def reset(self):
        self._plan: list[tuple[str, ActivityInstance]] = []
        self._expect = None

    def _signature(self, sim):
        return (sim.clock, sim.version)

    def decide(self, sim, assignments):
        if not assignments:
            return None
        if self._expect != self._signature(sim) or not self._plan:
            self._plan = self._solve(sim, assignments)
        r, k = self._plan.pop(0)
        # assignment bumps the version by exactly one
        self._expect = (sim.clock, sim.version + 1)
        return r, k

    @staticmethod
    def _solve(sim, assignments):
        model = sim.model
        idle = [r for r, _, _ in assignments.groups]
        n_idle = len(set(idle))
        # instances of one activity are interchangeable cost-wise; the oldest
        # n_idle per activity suffice
        cands: dict[str, list[ActivityInstance]] = {}
        edges = []
        for r, a, q in assignments.groups:
            if a not in cands:
                cands[a] = [k for _, k in zip(range(n_idle), q.values())]
            for k in cands[a]:
                edges.append((r, k.id, model.mean(r, a)))
        by_id = {k.id: k for ks in cands.values() for k in ks}
        matched = min_cost_matching(edges)
        plan = [(r, by_id[kid]) for r, kid in matched]
        plan.sort(key=lambda p: (model.resource_index(p[0]), model.activity_index(p[1].activity), p[1].created, p[1].id))
        return plan


def make_policy(spec: str, model=None):
    """Build a policy from a CLI spec string:
    ``spt|fifo|random|matching|svfa:<weights-file>|drl:<checkpoint>``."""
    name, _, arg = spec.partition(":")
    if name == "spt":
        return SPTPolicy()
    if name == "fifo":
        return FIFOPolicy()
    if name == "random":
        return RandomPolicy(int(arg) if arg else None)
    if name == "matching":
        return MatchingPolicy()
    if name == "svfa":
        from .svfa import SVFAPolicy, load_weights
        if not arg:
            raise ValueError("svfa policy needs a weights file: svfa:<path>")
        return SVFAPolicy(load_weights(arg))
    if name == "drl":
        from .drl.checkpoint import load_checkpoint
        from .drl.env import DRLPolicy
        if not arg:
            raise ValueError("drl policy needs a checkpoint: drl:<path>")
        net, header = load_checkpoint(arg, model)
        return DRLPolicy(net, model, temporal=header["temporal"])
    raise ValueError(f"unknown policy '{spec}'")
