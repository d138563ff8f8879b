"""Shipped scenario catalog: six two-activity scenarios and three composites.

Service-time means in the YAML files are calibration values chosen so each
scenario is stable at an arrival rate of 0.5 and exhibits its intended
allocation tension; they are repo data, not measured ground truth.
"""

from __future__ import annotations

from importlib import resources

import yaml

from ..model import ArrivalSpec, Node, ProcessModel, load_model, validate, ValidationError

SCENARIOS = (
    "low_utilization",
    "high_utilization",
    "slow_server",
    "slow_downstream",
    "n_network",
    "parallel",
)
COMPOSITES = ("composite", "composite_reversed", "composite_parallel")
ALL = SCENARIOS + COMPOSITES


class UnknownScenario(KeyError):
    pass


def scenario_text(name: str) -> str:
    if name not in SCENARIOS:
        raise UnknownScenario(name)
    return resources.files(__name__).joinpath(f"{name}.yaml").read_text()


def arrival_pattern(mean_rate: float = 0.5) -> ArrivalSpec:
    """The shipped periodic arrival pattern, rescaled to ``mean_rate``."""
    doc = yaml.safe_load(resources.files(__name__).joinpath("arrival_pattern.yaml").read_text())
    spec = ArrivalSpec(
        kind="pattern",
        period=float(doc["period"]),
        lambda_max=float(doc["lambda_max"]),
        curve=tuple((float(p), float(r)) for p, r in doc["curve"]),
        mean_rate=float(doc["mean_rate"]),
    )
    return spec if mean_rate == spec.mean_rate else spec.scaled(mean_rate)


def builtin_scenario(name: str, rate: float = 0.5, arrivals: str = "constant") -> ProcessModel:
    """Load a catalog model with the given mean arrival rate.

    Args:
        name: one of ``ALL``.
        rate: mean arrival rate (cases per time unit).
        arrivals: ``"constant"`` for Poisson arrivals or ``"pattern"`` for
            the periodic pattern scaled to ``rate``.
    """
    if rate <= 0:
        raise ValueError("arrival rate must be positive")
    if arrivals == "constant":
        spec = ArrivalSpec.constant(rate)
    elif arrivals == "pattern":
        spec = arrival_pattern(rate)
    else:
        raise ValueError(f"unknown arrivals variant {arrivals!r}")
    if name in SCENARIOS:
        base = load_model(scenario_text(name))
        return _assemble(name, [base], spec, parallel=False)
    if name not in COMPOSITES:
        raise UnknownScenario(name)
    parts = [load_model(scenario_text(s)) for s in SCENARIOS]
    if name == "composite_reversed":
        parts.reverse()
    return _assemble(name, parts, spec, parallel=name == "composite_parallel")


def _assemble(name: str, parts: list[ProcessModel], arrivals: ArrivalSpec, parallel: bool) -> ProcessModel:
    """Chain ``parts`` in sequence (end of one feeds the start of the next) or
    run them between one and_split and one and_join."""
    if len(parts) == 1:
        p = parts[0]
        return ProcessModel(name, p.activities, p.resources, dict(p.eligibility),
                            dict(p.service_means), dict(p.nodes), arrivals)

    def ren(i: int, nid: str) -> str:
        return f"s{i}.{nid}"

    activities, resources_, elig, means = [], [], {}, {}
    for p in parts:
        activities += p.activities
        resources_ += p.resources
        elig.update(p.eligibility)
        means.update(p.service_means)

    nodes: dict[str, Node] = {}
    first_targets = []
    for i, p in enumerate(parts):
        start = p.start
        first_targets.append(ren(i, start.targets[0]))
        ends = {n.id for n in p.nodes.values() if n.kind == "end"}
        if parallel:
            after = "join"
        else:
            after = ren(i + 1, parts[i + 1].start.targets[0]) if i + 1 < len(parts) else None
        for n in p.nodes.values():
            if n.kind in ("start", "end"):
                continue
            targets = []
            for t in n.targets:
                if t in ends and after is not None:
                    targets.append(after)
                elif t in ends:
                    targets.append("end")
                else:
                    targets.append(ren(i, t))
            nodes[ren(i, n.id)] = Node(ren(i, n.id), n.kind, tuple(targets), n.probs, n.activity, n.inputs)

    if parallel:
        nodes = {"start": Node("start", "start", ("fork",)),
                 "fork": Node("fork", "and_split", tuple(first_targets)),
                 **nodes,
                 "join": Node("join", "and_join", ("end",), inputs=len(parts)),
                 "end": Node("end", "end")}
    else:
        nodes = {"start": Node("start", "start", (first_targets[0],)), **nodes, "end": Node("end", "end")}
    model = ProcessModel(name, tuple(activities), tuple(resources_), elig, means, nodes, arrivals)
    problems = validate(model)
    if problems:
        raise ValidationError(problems)
    return model
