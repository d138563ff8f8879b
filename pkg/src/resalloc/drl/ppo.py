"""Proximal policy optimization with invalid-action masking.

One environment collects ``n_steps`` decisions per update (episodes reset at
the horizon), advantages come from GAE, and the clipped surrogate plus value
loss is minimized with Adam over shuffled minibatches. The learning rate
decays linearly to zero over ``max_steps``. The network is periodically
evaluated greedily on fixed seeds and the best one is kept.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..model import ProcessModel
from ..sim import DEFAULT_HORIZON, run_episode
from .env import AllocationEnv, DRLPolicy, sample_action
from .net import PolicyNet, entropy, entropy_grad_logits, log_prob_grad_logits

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1_000_000


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class PPOConfig:
    clip_range: float = 0.2
    n_steps: int = 25600
    batch_size: int = 256
    learning_rate: float = 3e-5
    lr_decay: bool = True
    gamma: float = 0.999
    gae_lambda: float = 0.95
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    n_epochs: int = 10
    max_grad_norm: float | None = 0.5
    normalize_advantage: bool = True
    max_steps: int = 20_000_000
    hidden: tuple[int, ...] = (128, 128)
    activation: str = "tanh"
    horizon: float = DEFAULT_HORIZON
    postpone_penalty: float = 0.0
    temporal: bool = False
    eval_interval: int = 1  # updates between evaluations; 0 disables
    eval_episodes: int = 5
    checkpoint_best: bool = True

    def check(self) -> "PPOConfig":
        if not 0 < self.clip_range < 1:
            raise ValueError("clip_range must lie in (0, 1)")
        for name in ("n_steps", "batch_size", "n_epochs", "max_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0 or not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("invalid learning rate, gamma or gae_lambda")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PPOConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class Adam:
    def __init__(self, size: int, eps: float = 1e-5, betas=(0.9, 0.999)):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.eps = eps
        self.b1, self.b2 = betas

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        params -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class Rollout:
    obs: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray  # dones[t]: the episode ended after step t
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None


def compute_gae(rewards, values, dones, last_value, gamma, lam):
    """Generalized advantage estimates; ``dones`` cut bootstrapping."""
    n = len(rewards)
    adv = np.zeros(n)
    gae = 0.0
    for t in range(n - 1, -1, -1):
        next_v = last_value if t == n - 1 else values[t + 1]
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_v * nonterminal - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        adv[t] = gae
    return adv, adv + values


def ppo_loss_and_grad(net: PolicyNet, batch: dict, cfg: PPOConfig):
    """Clipped-surrogate PPO loss on a minibatch and its gradient."""
    probs, values, cache = net.forward(batch["obs"], batch["masks"])
    n = len(batch["actions"])
    idx = np.arange(n)
    p_act = probs[idx, batch["actions"]]
    logp = np.log(p_act)
    adv = batch["advantages"]
    if cfg.normalize_advantage and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    ratio = np.exp(logp - batch["logp"])
    lo, hi = 1 - cfg.clip_range, 1 + cfg.clip_range
    surr1 = ratio * adv
    surr2 = np.clip(ratio, lo, hi) * adv
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    ent = entropy(probs)
    value_err = values - batch["returns"]
    value_loss = np.mean(value_err ** 2)
    loss = policy_loss - cfg.ent_coef * ent.mean() + cfg.vf_coef * value_loss

    # the clipped branch is the minimum only where ratio left the trust region
    # in the direction that benefits the objective; its gradient is zero there
    clipped = ((adv > 0) & (ratio > hi)) | ((adv < 0) & (ratio < lo))
    dlogp = np.where(clipped, 0.0, -adv * ratio / n)
    dlogits = dlogp[:, None] * log_prob_grad_logits(probs, batch["actions"])
    if cfg.ent_coef:
        dlogits -= (cfg.ent_coef / n) * entropy_grad_logits(probs)
    dvalues = cfg.vf_coef * 2.0 * value_err / n
    grad = net.backward(cache, dlogits, dvalues)
    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(ent.mean()),
        "clip_fraction": float(np.mean(np.abs(ratio - 1) > cfg.clip_range)),
    }
    return loss, grad, stats


@dataclass
class TrainResult:
    net: PolicyNet  # best evaluated network (or final if no evaluation ran)
    final_net: PolicyNet
    episodes: list[dict] = field(default_factory=list)
    evaluations: list[dict] = field(default_factory=list)
    steps: int = 0


def evaluate_greedy(net: PolicyNet, model: ProcessModel, cfg: PPOConfig, episodes: int) -> float:
    pol = DRLPolicy(net, model, "greedy", temporal=cfg.temporal)
    cts = [run_episode(model, pol, cfg.horizon, EVAL_SEED_OFFSET + i).mean_cycle_time
           for i in range(episodes)]
    return float(np.mean(cts))


def collect(env: AllocationEnv, net: PolicyNet, n_steps: int, state: dict, rng: np.random.Generator,
            episodes: list[dict]) -> tuple[Rollout, float]:
    A = env.actions.n
    obs_buf = np.zeros((n_steps, env.obs_dim))
    mask_buf = np.zeros((n_steps, A), dtype=bool)
    act = np.zeros(n_steps, dtype=np.int64)
    logp = np.zeros(n_steps)
    rew = np.zeros(n_steps)
    val = np.zeros(n_steps)
    dones = np.zeros(n_steps, dtype=bool)
    obs, mask = state["obs"], state["mask"]
    for t in range(n_steps):
        probs = net.act_probs(obs, mask)
        a = sample_action(probs, rng)
        obs_buf[t], mask_buf[t], act[t] = obs, mask, a
        logp[t] = math.log(probs[a])
        val[t] = net.value(obs)
        obs, mask, r, done = env.step(a)
        rew[t] = r
        state["ep_steps"] += 1
        if done:
            dones[t] = True
            st = env.sim.stats()
            episodes.append({
                "episode": len(episodes) + 1,
                "steps": state["ep_steps"],
                "total_reward": env.episode_reward,
                "mean_cycle_time": st.mean_cycle_time,
            })
            log.info("episode %d: reward %.3f, mean cycle time %.3f",
                     len(episodes), env.episode_reward, st.mean_cycle_time)
            state["episode_seed"] += 1
            state["ep_steps"] = 0
            obs, mask = env.reset(state["episode_seed"])
            while env.done:  # degenerate episode without decisions
                state["episode_seed"] += 1
                obs, mask = env.reset(state["episode_seed"])
    state["obs"], state["mask"] = obs, mask
    last_value = net.value(obs)
    return Rollout(obs_buf, mask_buf, act, logp, rew, val, dones), last_value


def ppo_train(model: ProcessModel, config: PPOConfig, seed: int = 0, callback=None) -> TrainResult:
    """Train a masked actor-critic on ``model``.

    ``callback(update, info)`` is called after each update; returning True
    stops training early.
    """
    cfg = config.check()
    env = AllocationEnv(model, cfg.horizon, cfg.temporal, cfg.postpone_penalty)
    net = PolicyNet(env.obs_dim, env.actions.n, cfg.hidden, cfg.activation, seed=seed)
    opt = Adam(net.size)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    episodes: list[dict] = []
    evaluations: list[dict] = []
    state = {"episode_seed": seed * 100_003, "ep_steps": 0}
    state["obs"], state["mask"] = env.reset(state["episode_seed"])
    best_net, best_score = None, math.inf
    steps = 0
    update = 0
    while steps < cfg.max_steps:
        n = min(cfg.n_steps, cfg.max_steps - steps)
        ro, last_value = collect(env, net, n, state, rng, episodes)
        steps += n
        ro.advantages, ro.returns = compute_gae(ro.rewards, ro.values, ro.dones, last_value,
                                                cfg.gamma, cfg.gae_lambda)
        frac = 1.0 - (steps - n) / cfg.max_steps
        lr = cfg.learning_rate * (frac if cfg.lr_decay else 1.0)
        stats = {}
        for _ in range(cfg.n_epochs):
            perm = rng.permutation(n)
            for s in range(0, n, cfg.batch_size):
                mb = perm[s:s + cfg.batch_size]
                batch = {"obs": ro.obs[mb], "masks": ro.masks[mb], "actions": ro.actions[mb],
                         "logp": ro.logp[mb], "advantages": ro.advantages[mb], "returns": ro.returns[mb]}
                loss, grad, stats = ppo_loss_and_grad(net, batch, cfg)
                if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                    raise NonFiniteLoss(f"non-finite loss at update {update + 1}: {stats}")
                if cfg.max_grad_norm:
                    gn = float(np.linalg.norm(grad))
                    if gn > cfg.max_grad_norm:
                        grad *= cfg.max_grad_norm / gn
                if lr > 0:
                    opt.step(net.params, grad, lr)
        update += 1
        info = {"update": update, "steps": steps, "lr": lr, **stats}
        if cfg.eval_interval and update % cfg.eval_interval == 0:
            score = evaluate_greedy(net, model, cfg, cfg.eval_episodes)
            if score < best_score:
                best_score, best_net = score, net.copy()
            evaluations.append({"update": update, "steps": steps, "mean_cycle_time": score,
                                "best": best_score})
            info["eval_mean_cycle_time"] = score
        log.info("update %d: %s", update, {k: round(v, 5) if isinstance(v, float) else v
                                            for k, v in info.items()})
        if callback is not None and callback(update, info):
            break
    final = net.copy()
    chosen = best_net if (cfg.checkpoint_best and best_net is not None) else final
    return TrainResult(chosen, final, episodes, evaluations, steps)
