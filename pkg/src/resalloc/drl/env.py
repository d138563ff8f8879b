"""The allocation problem as an episodic MDP over the simulator.

Actions index the fixed list of eligible (resource, activity) pairs plus a
final postpone action. Choosing pair (r, a) assigns r to the oldest waiting
instance of a. A case completing during a step earns 1 / (cycle time + 1)
for that step; postponing may carry a configured penalty.
"""

from __future__ import annotations

import numpy as np

from ..model import ProcessModel
from ..sim import DEFAULT_HORIZON, Simulation

QUEUE_SCALE = 100.0


class InfeasibleAction(ValueError):
    pass


def obs_size(model: ProcessModel, temporal: bool = False) -> int:
    return 2 * len(model.resources) + len(model.activities) + (1 if temporal else 0)


def encode_state(sim: Simulation, temporal: bool = False) -> np.ndarray:
    """Availability bits, normalized assigned-activity index per resource,
    truncated queue lengths per activity, and optionally the arrival-pattern
    phase."""
    model = sim.model
    n_a = len(model.activities)
    obs = np.zeros(obs_size(model, temporal))
    nr = len(model.resources)
    for i, r in enumerate(model.resources):
        if r in sim.available:
            obs[i] = 1.0
        else:
            obs[nr + i] = model.activity_index(sim.busy[r].activity) / n_a
    for j, a in enumerate(model.activities):
        obs[2 * nr + j] = min(len(sim.queues[a]) / QUEUE_SCALE, 1.0)
    if temporal:
        arr = model.arrivals
        obs[-1] = (sim.clock % arr.period) / arr.period if arr.kind == "pattern" else 0.0
    return obs


class ActionSpace:
    """Bijection between action indices and eligible pairs plus postpone."""

    def __init__(self, model: ProcessModel):
        self.pairs = model.eligible_pairs()
        self.index = {p: i for i, p in enumerate(self.pairs)}
        self.postpone = len(self.pairs)
        self.n = len(self.pairs) + 1

    def mask(self, sim: Simulation) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        for i, (r, a) in enumerate(self.pairs):
            m[i] = r in sim.available and bool(sim.queues[a])
        m[self.postpone] = True
        return m

    def decode(self, sim: Simulation, action: int):
        """Action index -> ``(resource, instance)`` or ``None`` for postpone."""
        if action == self.postpone:
            return None
        r, a = self.pairs[action]
        q = sim.queues[a]
        if r not in sim.available or not q:
            raise InfeasibleAction(f"action {action} ({r}, {a}) is masked")
        return r, next(iter(q.values()))


class AllocationEnv:
    def __init__(self, model: ProcessModel, horizon: float = DEFAULT_HORIZON, temporal: bool = False,
                 postpone_penalty: float = 0.0):
        self.model = model
        self.horizon = horizon
        self.temporal = temporal
        self.postpone_penalty = postpone_penalty
        self.actions = ActionSpace(model)
        self.obs_dim = obs_size(model, temporal)
        self.sim: Simulation | None = None
        self.episode_reward = 0.0
        self.n_postpones = 0

    def reset(self, seed: int):
        self.sim = Simulation(self.model, seed=seed, horizon=self.horizon)
        self._credited = 0
        self.episode_reward = 0.0
        self.n_postpones = 0
        self.done = not self.sim.advance()
        return self.observe()

    def observe(self):
        return encode_state(self.sim, self.temporal), self.actions.mask(self.sim)

    def step(self, action: int):
        """Apply ``action`` and evolve to the next decision point.

        Returns ``(obs, mask, reward, done)``.
        """
        sim = self.sim
        if self.done:
            raise InfeasibleAction("episode is over; call reset()")
        decision = self.actions.decode(sim, action)
        reward = 0.0
        if decision is None:
            self.n_postpones += 1
            reward += self.postpone_penalty
            running = sim.postpone()
        else:
            sim.assign(*decision)
            running = sim.has_assignment() or sim.advance()
        for case in sim.completed[self._credited:]:
            reward += 1.0 / (case.cycle_time + 1.0)
        self._credited = len(sim.completed)
        self.done = not running
        self.episode_reward += reward
        obs, mask = self.observe()
        return obs, mask, reward, self.done


class DRLPolicy:
    """Simulator policy backed by a trained network."""

    name = "drl"

    def __init__(self, net, model: ProcessModel, mode: str = "greedy", temporal: bool | None = None,
                 seed: int | None = None):
        if mode not in ("greedy", "sample"):
            raise ValueError("mode must be 'greedy' or 'sample'")
        self.net = net
        self.model = model
        self.mode = mode
        self.actions = ActionSpace(model)
        if temporal is None:
            temporal = net.obs_dim == obs_size(model, True)
        self.temporal = temporal
        if net.obs_dim != obs_size(model, temporal) or net.n_actions != self.actions.n:
            raise ValueError("network shape does not match the model")
        self.seed = seed

    def reset(self):
        self.rng = np.random.default_rng(self.seed) if self.seed is not None else None

    def choose(self, sim: Simulation) -> int:
        obs = encode_state(sim, self.temporal)
        mask = self.actions.mask(sim)
        probs = self.net.act_probs(obs, mask)
        if self.mode == "greedy":
            return int(np.argmax(probs))
        rng = getattr(self, "rng", None) or sim.policy_rng
        return sample_action(probs, rng)

    def decide(self, sim, assignments):
        return self.actions.decode(sim, self.choose(sim))


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(probs)
    i = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    i = min(i, len(probs) - 1)
    # guard against landing on a zero-probability entry through rounding
    while probs[i] == 0.0:
        i -= 1
    return i
