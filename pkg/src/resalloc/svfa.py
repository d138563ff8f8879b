"""Score-based value function approximation.

Every possible assignment gets a linear score over six hand-made features;
the lowest-scoring assignment is made if its score is below a learned
threshold, otherwise the policy postpones. Weights are tuned with Bayesian
optimization against simulated mean cycle time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .bayesopt import OptimizeResult, minimize
from .model import ProcessModel
from .sim import ActivityInstance, Simulation, run_episode

log = logging.getLogger(__name__)

WEIGHT_BOUNDS = (0.0, 100.0)


class InfeasiblePair(ValueError):
    pass


class FeatureVector(NamedTuple):
    mean_assignment: float
    var_assignment: float
    activity_rank: int
    resource_rank: int
    prob_fin: float
    queue_length: int


class Weights(NamedTuple):
    w1: float = 0.0  # mean processing time
    w2: float = 0.0  # processing time variance
    w3: float = 0.0  # activity rank
    w4: float = 0.0  # resource rank
    w5: float = 0.0  # probability the case finishes (subtracted)
    w6: float = 0.0  # queue length (subtracted)
    w7: float = 0.0  # postpone threshold

    def check(self) -> "Weights":
        lo, hi = WEIGHT_BOUNDS
        for name, w in zip(self._fields, self):
            if not (lo <= w <= hi):
                raise ValueError(f"weight {name}={w} outside [{lo}, {hi}]")
        return self


def score(w: Sequence[float], f: Sequence[float]) -> float:
    return (w[0] * f[0] + w[1] * f[1] + w[2] * f[2] + w[3] * f[3]
            - w[4] * f[4] - w[5] * f[5])


def instance_prob_fin(sim: Simulation, k: ActivityInstance) -> float:
    case = sim.cases[k.case]
    if len(case.pending) > 1 or case.pending[k.node] > 1:
        return 0.0
    return sim.model.prob_fin_alone(k.node, case.joins)


def compute_features(sim: Simulation, resource: str, k: ActivityInstance) -> FeatureVector:
    """Features of assigning ``k`` to ``resource`` in the simulation's current state."""
    model = sim.model
    if (resource, k) not in sim.possible_assignments():
        raise InfeasiblePair(f"({resource}, {k!r}) is not a possible assignment")
    m = model.mean(resource, k.activity)
    act_rank = 1 + sum(
        len(sim.queues[a]) for a in sim.serves[resource] if model.mean(resource, a) < m
    )
    res_rank = 1 + sum(
        1 for r in sim.available
        if r in model.eligibility[k.activity] and model.mean(r, k.activity) < m
    )
    return FeatureVector(m, model.variance(resource, k.activity), act_rank, res_rank,
                         instance_prob_fin(sim, k), len(sim.queues[k.activity]))


class SVFAPolicy:
    """Threshold-gated argmin of the linear assignment score."""

    name = "svfa"

    def __init__(self, weights: Sequence[float]):
        self.weights = Weights(*map(float, weights))

    def decide(self, sim, assignments):
        w = self.weights
        model = sim.model
        best = None  # (score, resource, instance)
        need_pf = w.w5 != 0.0
        for r, a, q in assignments.groups:
            m = model.mean(r, a)
            act_rank = 1 + sum(len(sim.queues[b]) for b in sim.serves[r] if model.mean(r, b) < m)
            res_rank = 1 + sum(1 for r2 in sim.available
                               if r2 in model.eligibility[a] and model.mean(r2, a) < m)
            k_best, pf_best = None, -1.0
            for k in q.values():
                pf = instance_prob_fin(sim, k) if need_pf else 0.0
                if pf > pf_best:
                    k_best, pf_best = k, pf
                    if pf >= 1.0 or not need_pf:
                        break
            f = (m, model.variance(r, a), act_rank, res_rank, pf_best, len(q))
            s = score(w, f)
            if best is None or s < best[0]:
                best = (s, r, k_best)
        if best is None or not best[0] < w.w7:
            return None
        return best[1], best[2]


# ---------------------------------------------------------------------------
# weights files


def save_weights(weights: Sequence[float], path: str | Path) -> None:
    w = Weights(*map(float, weights))
    Path(path).write_text(json.dumps(w._asdict(), indent=2) + "\n")


def load_weights(path: str | Path) -> Weights:
    doc = json.loads(Path(path).read_text())
    return Weights(**{k: float(doc[k]) for k in Weights._fields}).check()


# ---------------------------------------------------------------------------
# training


@dataclass
class BOConfig:
    trials: int = 20
    sims_per_trial: int = 5000
    horizon: float = 5000.0
    seed: int = 0
    n_initial: int = 8
    method: str = "gp"  # "gp" or "random"
    bounds: tuple[float, float] = WEIGHT_BOUNDS
    jobs: int = 1

    def check(self) -> "BOConfig":
        if self.n_initial < 2 or self.trials < self.n_initial:
            raise ValueError("need trials >= n_initial >= 2")
        if self.sims_per_trial < 1 or self.horizon <= 0:
            raise ValueError("sims_per_trial and horizon must be positive")
        return self


def _episode_mean(args) -> float:
    model, weights, horizon, seed = args
    return run_episode(model, SVFAPolicy(weights), horizon, seed).mean_cycle_time


def svfa_objective(model: ProcessModel, weights: Sequence[float], sims: int, horizon: float,
                   base_seed: int, jobs: int = 1) -> float:
    """Mean cycle time of ``SVFAPolicy(weights)`` over ``sims`` episodes with
    seeds ``base_seed .. base_seed + sims - 1``."""
    tasks = [(model, tuple(weights), horizon, base_seed + i) for i in range(sims)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as ex:
            vals = list(ex.map(_episode_mean, tasks, chunksize=max(1, sims // (4 * jobs))))
    else:
        vals = [_episode_mean(t) for t in tasks]
    return float(np.mean(vals))


@dataclass
class SVFAResult:
    weights: Weights
    objective: float
    history: list[dict] = field(default_factory=list)


def bayes_optimize(model: ProcessModel, config: BOConfig) -> SVFAResult:
    """Tune the seven weights to minimize simulated mean cycle time.

    Every trial reuses the same episode seeds, so trials are compared on
    common random numbers.
    """
    config.check()
    lo, hi = config.bounds

    def objective(x: np.ndarray) -> float:
        y = svfa_objective(model, x, config.sims_per_trial, config.horizon, config.seed, config.jobs)
        log.info("svfa trial w=%s -> %.4f", np.round(x, 3).tolist(), y)
        return y

    res: OptimizeResult = minimize(objective, [(lo, hi)] * 7, n_trials=config.trials,
                                   n_initial=config.n_initial, seed=config.seed, method=config.method)
    history = []
    for t, (x, y, inc) in enumerate(zip(res.xs, res.ys, res.incumbents), start=1):
        row = {"trial": t}
        row.update({f"w{i + 1}": float(v) for i, v in enumerate(x)})
        row.update({"objective": float(y), "incumbent": float(inc)})
        history.append(row)
    return SVFAResult(Weights(*map(float, res.x)), float(res.y), history)
