"""Static process structure: activities, resources, eligibility, routing, arrivals.

A model is loaded from a YAML scenario document (see ``load_model``) and is
immutable afterwards, so one instance can be shared by any number of
simulations.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import yaml

NODE_KINDS = ("start", "activity", "xor", "and_split", "and_join", "end")


class ParseError(ValueError):
    """The scenario text is not a well-formed scenario document."""


class ValidationError(ValueError):
    """The scenario parsed but violates one or more model invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid process model: " + "; ".join(self.violations))


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    targets: tuple[str, ...] = ()
    probs: tuple[float, ...] = ()  # xor only, aligned with targets
    activity: str | None = None  # activity nodes only
    inputs: int | None = None  # and_join only; None means in-degree


@dataclass(frozen=True)
class ArrivalSpec:
    """Constant-rate Poisson arrivals, or a periodic rate curve sampled by thinning.

    For the pattern variant ``curve`` holds ``(phase, rate)`` knots; the rate
    is linearly interpolated between knots and wraps around at ``period``.
    """

    kind: str  # "constant" | "pattern"
    rate: float = 0.0
    period: float = 0.0
    lambda_max: float = 0.0
    curve: tuple[tuple[float, float], ...] = ()
    mean_rate: float | None = None

    @classmethod
    def constant(cls, rate: float) -> "ArrivalSpec":
        return cls(kind="constant", rate=float(rate))

    def rate_at(self, t: float) -> float:
        if self.kind == "constant":
            return self.rate
        phase = t % self.period
        knots = self.curve
        if phase < knots[0][0]:
            p0, r0 = knots[-1][0] - self.period, knots[-1][1]
            p1, r1 = knots[0]
        else:
            i = 0
            while i + 1 < len(knots) and knots[i + 1][0] <= phase:
                i += 1
            p0, r0 = knots[i]
            if i + 1 < len(knots):
                p1, r1 = knots[i + 1]
            else:
                p1, r1 = knots[0][0] + self.period, knots[0][1]
        if p1 == p0:
            return r0
        return r0 + (r1 - r0) * (phase - p0) / (p1 - p0)

    def average_rate(self) -> float:
        """Exact time-average of the rate over one period."""
        if self.kind == "constant":
            return self.rate
        knots = list(self.curve) + [(self.curve[0][0] + self.period, self.curve[0][1])]
        area = 0.0
        for (p0, r0), (p1, r1) in zip(knots, knots[1:]):
            area += 0.5 * (r0 + r1) * (p1 - p0)
        return area / self.period

    def scaled(self, mean_rate: float) -> "ArrivalSpec":
        """Same shape, rescaled so the average rate equals ``mean_rate``."""
        if self.kind == "constant":
            return ArrivalSpec.constant(mean_rate)
        f = mean_rate / self.average_rate()
        return ArrivalSpec(
            kind="pattern",
            period=self.period,
            lambda_max=self.lambda_max * f,
            curve=tuple((p, r * f) for p, r in self.curve),
            mean_rate=mean_rate,
        )


@dataclass(frozen=True)
class ProcessModel:
    name: str
    activities: tuple[str, ...]
    resources: tuple[str, ...]
    eligibility: Mapping[str, tuple[str, ...]]
    service_means: Mapping[tuple[str, str], float]  # (resource, activity) -> mean
    nodes: Mapping[str, Node]
    arrivals: ArrivalSpec
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    # ------------------------------------------------------------------ lookup
    @property
    def start(self) -> Node:
        return next(n for n in self.nodes.values() if n.kind == "start")

    def activity_index(self, activity: str) -> int:
        """1-based position of ``activity`` in the fixed ordering."""
        return self._index("act", self.activities)[activity]

    def resource_index(self, resource: str) -> int:
        """1-based position of ``resource`` in the fixed ordering."""
        return self._index("res", self.resources)[resource]

    def _index(self, key: str, seq: tuple[str, ...]) -> dict[str, int]:
        idx = self._cache.get(key)
        if idx is None:
            idx = {x: i + 1 for i, x in enumerate(seq)}
            self._cache[key] = idx
        return idx

    def mean(self, resource: str, activity: str) -> float:
        return self.service_means[(resource, activity)]

    def variance(self, resource: str, activity: str) -> float:
        # exponential service times
        return self.service_means[(resource, activity)] ** 2

    def eligible_pairs(self) -> list[tuple[str, str]]:
        """All (resource, activity) pairs allowed by eligibility, ordered by
        (resource index, activity index)."""
        pairs = self._cache.get("pairs")
        if pairs is None:
            pairs = sorted(
                ((r, a) for a in self.activities for r in self.eligibility[a]),
                key=lambda p: (self.resource_index(p[0]), self.activity_index(p[1])),
            )
            self._cache["pairs"] = pairs
        return list(pairs)

    def join_inputs(self, node_id: str) -> int:
        node = self.nodes[node_id]
        if node.inputs is not None:
            return node.inputs
        indeg = self._cache.get("indeg")
        if indeg is None:
            indeg = Counter(t for n in self.nodes.values() for t in n.targets)
            self._cache["indeg"] = indeg
        return indeg[node_id]

    # ----------------------------------------------------------------- routing
    def route(self, targets: Iterable[str], joins: dict[str, int], choose) -> list[str]:
        """Move tokens from ``targets`` until each rests on an activity node,
        an end node, or an unsatisfied join.

        ``joins`` (join id -> tokens arrived) is updated in place. ``choose``
        maps an xor node to one of its targets. Returns the activity node ids
        on which new instances must be created, in visiting order.
        """
        spawned: list[str] = []
        stack = list(reversed(list(targets)))
        while stack:
            node = self.nodes[stack.pop()]
            if node.kind == "activity":
                spawned.append(node.id)
            elif node.kind == "xor":
                stack.append(choose(node))
            elif node.kind == "and_split":
                stack.extend(reversed(node.targets))
            elif node.kind == "and_join":
                joins[node.id] = joins.get(node.id, 0) + 1
                if joins[node.id] == self.join_inputs(node.id):
                    del joins[node.id]
                    stack.extend(reversed(node.targets))
            elif node.kind == "end":
                pass
            else:  # start has no incoming edges in a valid model
                stack.extend(reversed(node.targets))
        return spawned

    def prob_fin(self, node_id: str, pending: Mapping[str, int], joins: Mapping[str, int]) -> float:
        """Probability that completing the instance on activity node ``node_id``
        completes its case.

        ``pending`` counts the case's live (waiting or processing) instances per
        activity node, including the one being evaluated; ``joins`` holds the
        tokens already waiting at and_joins.
        """
        others = Counter({k: v for k, v in pending.items() if v})
        others[node_id] -= 1
        if +others:
            return 0.0
        return self.prob_fin_alone(node_id, joins)

    def prob_fin_alone(self, node_id: str, joins: Mapping[str, int]) -> float:
        """``prob_fin`` for an instance that is its case's only live one."""
        key = ("pf", node_id, frozenset(joins.items()) if joins else None)
        p = self._cache.get(key)
        if p is None:
            p = self._p_end(list(self.nodes[node_id].targets), dict(joins))
            self._cache[key] = p
        return p

    def _p_end(self, stack: list[str], joins: dict[str, int]) -> float:
        while stack:
            node = self.nodes[stack.pop()]
            if node.kind == "activity":
                return 0.0
            if node.kind == "xor":
                return sum(
                    p * self._p_end(stack + [t], dict(joins))
                    for t, p in zip(node.targets, node.probs)
                    if p > 0
                )
            if node.kind == "and_join":
                joins[node.id] = joins.get(node.id, 0) + 1
                if joins[node.id] == self.join_inputs(node.id):
                    del joins[node.id]
                    stack.extend(node.targets)
            elif node.kind != "end":
                stack.extend(node.targets)
        return 1.0 if not joins else 0.0


# ---------------------------------------------------------------------------
# validation


def validate(model: ProcessModel) -> list[str]:
    """Return the list of violated invariants; empty means the model is valid."""
    v: list[str] = []
    if len(set(model.activities)) != len(model.activities):
        v.append("duplicate activity ids")
    if len(set(model.resources)) != len(model.resources):
        v.append("duplicate resource ids")
    if not model.activities:
        v.append("no activities")
    if not model.resources:
        v.append("no resources")
    res = set(model.resources)
    for a in model.activities:
        elig = model.eligibility.get(a, ())
        if not elig:
            v.append(f"empty eligibility for activity {a}")
        for r in elig:
            if r not in res:
                v.append(f"unknown resource {r} in eligibility of {a}")
            elif (r, a) not in model.service_means:
                v.append(f"missing service mean for ({r}, {a})")
    for a in model.eligibility:
        if a not in model.activities:
            v.append(f"eligibility for unknown activity {a}")
    for (r, a), m in model.service_means.items():
        if not (isinstance(m, (int, float)) and math.isfinite(m) and m > 0):
            v.append(f"non-positive mean for ({r}, {a})")
    v.extend(_validate_routing(model))
    v.extend(_validate_arrivals(model.arrivals))
    return v


def _validate_routing(model: ProcessModel) -> list[str]:
    v: list[str] = []
    nodes = model.nodes
    starts = [n for n in nodes.values() if n.kind == "start"]
    if len(starts) != 1:
        v.append(f"routing needs exactly one start node, found {len(starts)}")
    if not any(n.kind == "end" for n in nodes.values()):
        v.append("routing has no end node")
    for n in nodes.values():
        if n.kind not in NODE_KINDS:
            v.append(f"node {n.id}: unknown type {n.kind}")
            continue
        for t in n.targets:
            if t not in nodes:
                v.append(f"node {n.id}: unknown target {t}")
            elif nodes[t].kind == "start":
                v.append(f"node {n.id}: edge into start node")
        if n.kind == "end" and n.targets:
            v.append(f"end node {n.id} has outgoing edges")
        if n.kind in ("start", "activity", "and_join") and len(n.targets) != 1:
            v.append(f"node {n.id}: {n.kind} needs exactly one target")
        if n.kind == "activity" and n.activity not in model.activities:
            v.append(f"node {n.id}: unknown activity {n.activity}")
        if n.kind == "xor":
            if len(n.probs) != len(n.targets) or not n.targets:
                v.append(f"xor {n.id}: branches malformed")
            elif any(p < 0 for p in n.probs):
                v.append(f"xor {n.id}: negative branch probability")
            elif abs(sum(n.probs) - 1.0) > 1e-9:
                v.append(f"xor {n.id}: probabilities must sum to 1")
        if n.kind == "and_split" and len(n.targets) < 2:
            v.append(f"and_split {n.id} needs at least two targets")
    if v:
        return v
    if _has_cycle(nodes):
        return ["routing graph has a cycle"]
    reach = _reachable(nodes, starts[0].id)
    for n in nodes.values():
        if n.id not in reach:
            v.append(f"node {n.id} unreachable from start")
    joins = {n.id for n in nodes.values() if n.kind == "and_join"}
    for n in nodes.values():
        if n.kind == "and_split":
            common = set.intersection(*(_reachable(nodes, t) & joins for t in n.targets))
            if not common:
                v.append(f"and_split {n.id} has no matching and_join")
    if not v:
        v.extend(_check_soundness(model))
    return v


def _has_cycle(nodes: Mapping[str, Node]) -> bool:
    color: dict[str, int] = {}

    def visit(nid: str) -> bool:
        color[nid] = 1
        for t in nodes[nid].targets:
            c = color.get(t, 0)
            if c == 1 or (c == 0 and visit(t)):
                return True
        color[nid] = 2
        return False

    return any(color.get(n, 0) == 0 and visit(n) for n in nodes)


def _reachable(nodes: Mapping[str, Node], start: str) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        for t in nodes[stack.pop()].targets:
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen


def _check_soundness(model: ProcessModel, limit: int = 4096) -> list[str]:
    """Play the token game over every xor outcome, treating activities as
    pass-through; every run must end with no tokens stuck at a join."""
    nodes = model.nodes
    runs = [([model.start.targets[0]], {})]
    explored = 0
    while runs:
        stack, joins = runs.pop()
        stack = list(stack)
        while stack:
            explored += 1
            if explored > limit * 64:
                return []  # too large to enumerate; structural checks only
            n = nodes[stack.pop()]
            if n.kind == "xor":
                for t, p in zip(n.targets, n.probs):
                    if p > 0:
                        runs.append((stack + [t], dict(joins)))
                break
            if n.kind == "and_join":
                joins[n.id] = joins.get(n.id, 0) + 1
                need = model.join_inputs(n.id)
                if joins[n.id] > need:
                    return [f"and_join {n.id} receives more tokens than it expects"]
                if joins[n.id] == need:
                    del joins[n.id]
                    stack.extend(n.targets)
            else:
                stack.extend(n.targets)
        else:
            if joins:
                return ["unmatched and_split/and_join: join " + ", ".join(sorted(joins)) + " never fires"]
        if len(runs) > limit:
            return []
    return []


def _validate_arrivals(spec: ArrivalSpec) -> list[str]:
    if spec.kind == "constant":
        return [] if spec.rate > 0 else ["arrival rate must be positive"]
    if spec.kind != "pattern":
        return [f"unknown arrival kind {spec.kind}"]
    v = []
    if spec.period <= 0:
        v.append("arrival pattern period must be positive")
    if spec.lambda_max <= 0:
        v.append("lambda_max must be positive")
    if not spec.curve:
        v.append("arrival pattern curve is empty")
        return v
    phases = [p for p, _ in spec.curve]
    if phases != sorted(phases) or len(set(phases)) != len(phases):
        v.append("curve phases must be strictly increasing")
    if phases[0] < 0 or phases[-1] >= spec.period:
        v.append("curve phases must lie in [0, period)")
    for _, r in spec.curve:
        if not (0 < r <= spec.lambda_max * (1 + 1e-12)):
            v.append("curve rates must lie in (0, lambda_max]")
            break
    if not v and spec.mean_rate is not None:
        avg = spec.average_rate()
        if abs(avg - spec.mean_rate) > 0.01 * spec.mean_rate:
            v.append(f"curve average {avg:.4g} differs from declared mean rate {spec.mean_rate:.4g}")
    return v


# ---------------------------------------------------------------------------
# (de)serialization


def _require(doc: Mapping, key: str):
    if key not in doc:
        raise ParseError(f"missing section '{key}'")
    return doc[key]


def _parse_node(entry: Any) -> Node:
    if not isinstance(entry, Mapping) or "id" not in entry or "type" not in entry:
        raise ParseError(f"routing entry needs 'id' and 'type': {entry!r}")
    nid, kind = str(entry["id"]), str(entry["type"])
    to = entry.get("to", [])
    if isinstance(to, str):
        to = [to]
    if kind == "xor":
        branches = entry.get("branches")
        if not isinstance(branches, list):
            raise ParseError(f"xor {nid}: 'branches' must be a list")
        try:
            targets = tuple(str(b["to"]) for b in branches)
            probs = tuple(float(b["p"]) for b in branches)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"xor {nid}: bad branch ({exc})") from None
        return Node(nid, kind, targets, probs)
    activity = entry.get("activity", nid) if kind == "activity" else None
    inputs = entry.get("inputs")
    return Node(
        nid,
        kind,
        tuple(str(t) for t in to),
        activity=None if activity is None else str(activity),
        inputs=None if inputs is None else int(inputs),
    )


def _parse_arrivals(doc: Any) -> ArrivalSpec:
    if not isinstance(doc, Mapping):
        raise ParseError("'arrivals' must be a mapping")
    try:
        if "constant" in doc:
            return ArrivalSpec.constant(float(doc["constant"]))
        if "pattern" in doc:
            p = doc["pattern"]
            curve = tuple((float(ph), float(r)) for ph, r in p["curve"])
            mean = p.get("mean_rate")
            return ArrivalSpec(
                kind="pattern",
                period=float(p["period"]),
                lambda_max=float(p["lambda_max"]),
                curve=curve,
                mean_rate=None if mean is None else float(mean),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad arrivals section ({exc})") from None
    raise ParseError("'arrivals' needs either 'constant' or 'pattern'")


def parse_model(text: str) -> ProcessModel:
    """Parse scenario text into a model without validating it."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"not valid YAML: {exc}") from None
    if not isinstance(doc, Mapping):
        raise ParseError("scenario document must be a mapping")
    activities = _require(doc, "activities")
    resources = _require(doc, "resources")
    eligibility = _require(doc, "eligibility")
    means = _require(doc, "service_means")
    routing = _require(doc, "routing")
    if not isinstance(activities, list) or not isinstance(resources, list):
        raise ParseError("'activities' and 'resources' must be lists")
    if not isinstance(eligibility, Mapping) or not isinstance(means, Mapping):
        raise ParseError("'eligibility' and 'service_means' must be mappings")
    if not isinstance(routing, list):
        raise ParseError("'routing' must be a list of nodes")
    service: dict[tuple[str, str], float] = {}
    for r, row in means.items():
        if not isinstance(row, Mapping):
            raise ParseError(f"service_means for {r} must map activity -> mean")
        for a, m in row.items():
            try:
                service[(str(r), str(a))] = float(m)
            except (TypeError, ValueError):
                raise ParseError(f"service mean for ({r}, {a}) is not a number") from None
    nodes: dict[str, Node] = {}
    for entry in routing:
        node = _parse_node(entry)
        if node.id in nodes:
            raise ParseError(f"duplicate routing node id {node.id}")
        nodes[node.id] = node
    return ProcessModel(
        name=str(doc.get("name", "model")),
        activities=tuple(str(a) for a in activities),
        resources=tuple(str(r) for r in resources),
        eligibility={str(a): tuple(str(r) for r in (rs or ())) for a, rs in eligibility.items()},
        service_means=service,
        nodes=nodes,
        arrivals=_parse_arrivals(_require(doc, "arrivals")),
    )


def load_model(text: str) -> ProcessModel:
    """Parse and validate a scenario document.

    Raises:
        ParseError: the text is not a scenario document.
        ValidationError: the model violates an invariant; ``.violations``
            lists every problem found.
    """
    model = parse_model(text)
    problems = validate(model)
    if problems:
        raise ValidationError(problems)
    return model


def model_to_dict(model: ProcessModel) -> dict:
    routing = []
    for n in model.nodes.values():
        entry: dict[str, Any] = {"id": n.id, "type": n.kind}
        if n.kind == "xor":
            entry["branches"] = [{"to": t, "p": p} for t, p in zip(n.targets, n.probs)]
        elif n.targets:
            entry["to"] = list(n.targets) if n.kind == "and_split" else n.targets[0]
        if n.kind == "activity" and n.activity != n.id:
            entry["activity"] = n.activity
        if n.inputs is not None:
            entry["inputs"] = n.inputs
        routing.append(entry)
    means: dict[str, dict[str, float]] = {}
    for (r, a), m in model.service_means.items():
        means.setdefault(r, {})[a] = m
    arr = model.arrivals
    if arr.kind == "constant":
        arrivals: dict[str, Any] = {"constant": arr.rate}
    else:
        pat: dict[str, Any] = {
            "period": arr.period,
            "lambda_max": arr.lambda_max,
            "curve": [[p, r] for p, r in arr.curve],
        }
        if arr.mean_rate is not None:
            pat["mean_rate"] = arr.mean_rate
        arrivals = {"pattern": pat}
    return {
        "name": model.name,
        "activities": list(model.activities),
        "resources": list(model.resources),
        "eligibility": {a: list(rs) for a, rs in model.eligibility.items()},
        "service_means": means,
        "routing": routing,
        "arrivals": arrivals,
    }


def dump_model(model: ProcessModel) -> str:
    return yaml.safe_dump(model_to_dict(model), sort_keys=False, default_flow_style=None)


def with_arrivals(model: ProcessModel, arrivals: ArrivalSpec) -> ProcessModel:
    return ProcessModel(
        name=model.name,
        activities=model.activities,
        resources=model.resources,
        eligibility=model.eligibility,
        service_means=model.service_means,
        nodes=model.nodes,
        arrivals=arrivals,
    )
