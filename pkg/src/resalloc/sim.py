"""Discrete-event execution of a process model under a resource allocation policy.

The engine stops at *decision points*, moments where at least one idle
resource is eligible for at least one waiting activity instance, and lets the
caller assign or postpone. ``run_episode`` wires a policy into that loop.

Randomness is split into four independent streams derived from one seed
(arrivals, service times, xor routing, policy) so that different policies
see the same arrival sequence under the same seed.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .model import ArrivalSpec, ProcessModel

DEFAULT_HORIZON = 5000.0

# event priorities at equal timestamps: completions first, then arrivals
_COMPLETE, _ARRIVAL = 0, 1


class InfeasibleAssignment(ValueError):
    pass


class Event(NamedTuple):
    activity: str
    case: int
    time: float
    resource: str | None
    lifecycle: str  # "start" | "complete"


@dataclass(eq=False)
class ActivityInstance:
    id: int
    case: int
    activity: str
    node: str
    created: float
    state: str = "waiting"  # waiting -> processing -> complete
    resource: str | None = None
    started: float | None = None

    def __repr__(self) -> str:
        return f"<k{self.id} {self.activity} case={self.case} {self.state}>"


@dataclass(eq=False)
class Case:
    id: int
    arrival: float
    completion: float | None = None
    pending: Counter = field(default_factory=Counter)  # activity node -> live instances
    joins: dict = field(default_factory=dict)  # and_join -> tokens arrived
    instances: list = field(default_factory=list)

    @property
    def cycle_time(self) -> float | None:
        return None if self.completion is None else self.completion - self.arrival


@dataclass(frozen=True)
class ExecutionState:
    """Immutable snapshot of (C, K, R+, R-, B, t)."""

    cases: frozenset[int]
    waiting: frozenset[int]
    available: frozenset[str]
    busy: frozenset[str]
    assignments: frozenset[tuple[str, int]]
    time: float


@dataclass
class EpisodeStats:
    horizon: float
    cycle_times: list[float]  # completed cases in completion order, then truncated cases
    n_completed: int
    n_truncated: int
    utilization: dict[str, float]
    reward_total: float
    n_arrivals: int
    trace: list[Event] = field(default_factory=list, repr=False)

    @property
    def mean_cycle_time(self) -> float:
        return float(np.mean(self.cycle_times)) if self.cycle_times else math.nan

    @property
    def completed_cycle_times(self) -> list[float]:
        return self.cycle_times[: self.n_completed]

    def as_rows(self) -> list[tuple[str, str]]:
        rows = [
            ("horizon", repr(self.horizon)),
            ("arrivals", str(self.n_arrivals)),
            ("completed_cases", str(self.n_completed)),
            ("truncated_cases", str(self.n_truncated)),
            ("mean_cycle_time", repr(self.mean_cycle_time)),
            ("reward_total", repr(self.reward_total)),
        ]
        rows += [(f"utilization.{r}", repr(u)) for r, u in self.utilization.items()]
        return rows


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(4)
    names = ("arrivals", "service", "routing", "policy")
    return {n: np.random.Generator(np.random.PCG64(s)) for n, s in zip(names, children)}


def sample_interarrival(spec: ArrivalSpec, now: float, rng: np.random.Generator) -> float:
    """Time of the next arrival after ``now``.

    Pattern arrivals use thinning: candidates come at rate ``lambda_max`` and
    are kept with probability rate(t) / lambda_max.
    """
    if spec.kind == "constant":
        return now + rng.exponential(1.0 / spec.rate)
    t = now
    while True:
        t += rng.exponential(1.0 / spec.lambda_max)
        if rng.random() * spec.lambda_max < spec.rate_at(t):
            return t


class Assignments:
    """The set D of possible assignments in the current state.

    Iteration yields ``(resource, instance)`` pairs in the global tie order
    (resource index, activity index, instance creation). The view reads the
    live queues, so it must be consumed before the simulation changes state.
    """

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.groups: list[tuple[str, str, dict[int, ActivityInstance]]] = []
        for r in sim.available_sorted():
            for a in sim.serves[r]:
                q = sim.queues[a]
                if q:
                    self.groups.append((r, a, q))

    def __iter__(self) -> Iterator[tuple[str, ActivityInstance]]:
        for r, _, q in self.groups:
            for k in q.values():
                yield r, k

    def __len__(self) -> int:
        return sum(len(q) for _, _, q in self.groups)

    def __bool__(self) -> bool:
        return bool(self.groups)

    def __contains__(self, pair) -> bool:
        r, k = pair
        return any(r == gr and k.activity == a and q.get(k.id) is k for gr, a, q in self.groups)

    def pairs(self) -> list[tuple[str, ActivityInstance]]:
        return list(self)

    def nth(self, i: int) -> tuple[str, ActivityInstance]:
        for r, _, q in self.groups:
            if i < len(q):
                for j, k in enumerate(q.values()):
                    if j == i:
                        return r, k
            i -= len(q)
        raise IndexError(i)


class Simulation:
    """Mutable, single-threaded simulation of one episode."""

    def __init__(self, model: ProcessModel, seed: int = 0, horizon: float = DEFAULT_HORIZON,
                 record_trace: bool = False):
        self.model = model
        self.seed = seed
        self.horizon = float(horizon)
        self.record_trace = record_trace
        self.streams = make_streams(seed)
        self.policy_rng = self.streams["policy"]
        self.clock = 0.0
        self.done = False

        self.cases: dict[int, Case] = {}
        self.queues: dict[str, dict[int, ActivityInstance]] = {a: {} for a in model.activities}
        self.available: set[str] = set(model.resources)
        self.busy: dict[str, ActivityInstance] = {}
        self.serves: dict[str, tuple[str, ...]] = {
            r: tuple(a for a in model.activities if r in model.eligibility[a]) for r in model.resources
        }
        self._res_order = {r: i for i, r in enumerate(model.resources)}

        self.completed: list[Case] = []
        self.trace: list[Event] = []
        self.busy_time: dict[str, float] = {r: 0.0 for r in model.resources}
        self.n_arrivals = 0
        self.n_waiting = 0
        self.version = 0  # bumped whenever K or R+ changes
        self._events: list = []
        self._seq = 0
        self._next_case = 0
        self._next_instance = 0
        self._schedule(sample_interarrival(model.arrivals, 0.0, self.streams["arrivals"]), _ARRIVAL, None)

    # ------------------------------------------------------------------ views
    def available_sorted(self) -> list[str]:
        return sorted(self.available, key=self._res_order.__getitem__)

    def waiting(self) -> Iterator[ActivityInstance]:
        for q in self.queues.values():
            yield from q.values()

    def possible_assignments(self) -> Assignments:
        return Assignments(self)

    def has_assignment(self) -> bool:
        for r in self.available:
            for a in self.serves[r]:
                if self.queues[a]:
                    return True
        return False

    def state(self) -> ExecutionState:
        return ExecutionState(
            cases=frozenset(self.cases),
            waiting=frozenset(k.id for k in self.waiting()),
            available=frozenset(self.available),
            busy=frozenset(self.busy),
            assignments=frozenset((r, k.id) for r, k in self.busy.items()),
            time=self.clock,
        )

    # ---------------------------------------------------------------- actions
    def assign(self, resource: str, instance: ActivityInstance) -> None:
        """Start ``instance`` on ``resource`` at the current clock."""
        if self.done:
            raise InfeasibleAssignment("episode already finished")
        if resource not in self.available:
            raise InfeasibleAssignment(f"resource {resource} is not available")
        q = self.queues.get(instance.activity)
        if q is None or q.get(instance.id) is not instance:
            raise InfeasibleAssignment(f"{instance!r} is not waiting")
        if resource not in self.model.eligibility[instance.activity]:
            raise InfeasibleAssignment(f"{resource} is not eligible for {instance.activity}")
        del q[instance.id]
        self.n_waiting -= 1
        self.available.discard(resource)
        self.busy[resource] = instance
        instance.state = "processing"
        instance.resource = resource
        instance.started = self.clock
        self.version += 1
        mean = self.model.service_means[(resource, instance.activity)]
        duration = mean * self.streams["service"].standard_exponential()
        self._schedule(self.clock + duration, _COMPLETE, instance)
        if self.record_trace:
            self.trace.append(Event(instance.activity, instance.case, self.clock, resource, "start"))

    def advance(self) -> bool:
        """Process events until an assignment is possible.

        Returns True at a decision point, False once the horizon is reached.
        """
        while not self.has_assignment():
            if not self._step():
                return False
        return True

    def postpone(self) -> bool:
        """Let time pass until K or R+ changes, then advance to the next
        decision point. Returns False if the horizon is reached first."""
        v = self.version
        while self.version == v:
            if not self._step():
                return False
        return self.advance()

    # -------------------------------------------------------------- internals
    def _schedule(self, time: float, prio: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._events, (time, prio, self._seq, payload))

    def _step(self) -> bool:
        """Process every event at the next timestamp."""
        if self.done:
            return False
        if not self._events or self._events[0][0] > self.horizon:
            self._finish()
            return False
        t = self._events[0][0]
        self.clock = t
        while self._events and self._events[0][0] == t:
            _, prio, _, payload = heapq.heappop(self._events)
            if prio == _COMPLETE:
                self._complete(payload)
            else:
                self._arrive()
        return True

    def _choose(self, node) -> str:
        u = self.streams["routing"].random()
        acc = 0.0
        for t, p in zip(node.targets, node.probs):
            acc += p
            if u < acc:
                return t
        return node.targets[-1]

    def _spawn(self, case: Case, node_ids: list[str]) -> None:
        nodes = self.model.nodes
        for nid in node_ids:
            act = nodes[nid].activity
            k = ActivityInstance(self._next_instance, case.id, act, nid, self.clock)
            self._next_instance += 1
            case.pending[nid] += 1
            case.instances.append(k)
            self.queues[act][k.id] = k
            self.n_waiting += 1
            self.version += 1

    def _arrive(self) -> None:
        case = Case(self._next_case, self.clock)
        self._next_case += 1
        self.n_arrivals += 1
        self.cases[case.id] = case
        spawned = self.model.route(self.model.start.targets, case.joins, self._choose)
        self._spawn(case, spawned)
        self._maybe_close(case)
        self._schedule(sample_interarrival(self.model.arrivals, self.clock, self.streams["arrivals"]),
                       _ARRIVAL, None)

    def _complete(self, k: ActivityInstance) -> None:
        r = k.resource
        del self.busy[r]
        self.available.add(r)
        self.version += 1
        self.busy_time[r] += self.clock - k.started
        k.state = "complete"
        if self.record_trace:
            self.trace.append(Event(k.activity, k.case, self.clock, r, "complete"))
        case = self.cases[k.case]
        case.pending[k.node] -= 1
        if not case.pending[k.node]:
            del case.pending[k.node]
        spawned = self.model.route(self.model.nodes[k.node].targets, case.joins, self._choose)
        self._spawn(case, spawned)
        self._maybe_close(case)

    def _maybe_close(self, case: Case) -> None:
        if not case.pending and not case.joins:
            case.completion = self.clock
            del self.cases[case.id]
            self.completed.append(case)

    def _finish(self) -> None:
        self.clock = self.horizon
        self.done = True

    # ------------------------------------------------------------------ stats
    def stats(self) -> EpisodeStats:
        """Episode statistics so far; open cases are truncated at the clock."""
        now = self.clock
        done_ct = [c.completion - c.arrival for c in self.completed]
        open_ct = [now - c.arrival for c in self.cases.values()]
        busy = dict(self.busy_time)
        for r, k in self.busy.items():
            busy[r] += now - k.started
        util = {r: (b / now if now > 0 else 0.0) for r, b in busy.items()}
        return EpisodeStats(
            horizon=now,
            cycle_times=done_ct + open_ct,
            n_completed=len(done_ct),
            n_truncated=len(open_ct),
            utilization=util,
            reward_total=math.fsum(1.0 / (ct + 1.0) for ct in done_ct),
            n_arrivals=self.n_arrivals,
            trace=list(self.trace),
        )


def run_episode(model: ProcessModel, policy, horizon: float = DEFAULT_HORIZON, seed: int = 0,
                record_trace: bool = False) -> EpisodeStats:
    """Simulate one episode with ``policy`` choosing at every decision point."""
    sim = Simulation(model, seed=seed, horizon=horizon, record_trace=record_trace)
    reset = getattr(policy, "reset", None)
    if reset is not None:
        reset()
    running = sim.advance()
    while running:
        decision = policy.decide(sim, sim.possible_assignments())
        if decision is None:
            running = sim.postpone()
            continue
        sim.assign(*decision)
        if not sim.has_assignment():
            running = sim.advance()
    return sim.stats()
