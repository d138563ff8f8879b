"""Acceptance criteria, one test per criterion.

Each test carries a ``criterion`` marker; the session summary prints one
PASS/FAIL line per criterion. Criterion 7 has three independent parts.
"""

import math

import numpy as np
import pytest

from resalloc import Simulation, builtin_scenario, run_episode
from resalloc.bayesopt import minimize
from resalloc.cli import PRESETS, main, ppo_config
from resalloc.drl import ActionSpace, AllocationEnv, DRLPolicy, PolicyNet, encode_state, obs_size, ppo_train
from resalloc.drl.env import sample_action
from resalloc.harness import compare, evaluate, sweep
from resalloc.matching import min_cost_matching
from resalloc.policies import FIFOPolicy, RandomPolicy, SPTPolicy
from resalloc.scenarios import COMPOSITES, SCENARIOS
from resalloc.svfa import SVFAPolicy

from conftest import mm1_model
from oracles import brute_force_matching

EVAL_BASE_SEED = 50_000  # disjoint from training episode and evaluation seeds


@pytest.mark.criterion(1, "M/M/1 mean cycle time within 5% of 2.0 (200 x 5000)")
def test_c01_queueing_oracle():
    rep = evaluate(mm1_model(lam=0.5, mean=1.0), SPTPolicy(), n=200, horizon=5000.0, base_seed=0)
    analytic = 1.0 / (1.0 - 0.5)
    print(f"M/M/1 mean cycle time {rep.mean:.4f} (analytic {analytic})")
    assert abs(rep.mean - analytic) <= 0.05 * analytic


@pytest.mark.criterion(2, "SVFA(1,0,0,0,0,0; w7=100) trace-identical to SPT, 50 seeds x 6 scenarios")
def test_c02_svfa_reduces_to_spt():
    for name in SCENARIOS:
        m = builtin_scenario(name)
        for seed in range(50):
            a = run_episode(m, SVFAPolicy((1, 0, 0, 0, 0, 0, 100)), 5000.0, seed, record_trace=True)
            b = run_episode(m, SPTPolicy(), 5000.0, seed, record_trace=True)
            assert a.trace == b.trace, (name, seed)
            assert a.cycle_times == b.cycle_times


@pytest.mark.criterion(3, "mask soundness over 1e5 fuzzed states")
def test_c03_mask_soundness():
    rng = np.random.default_rng(0)
    states = 0
    names = list(SCENARIOS) + list(COMPOSITES)
    while states < 100_000:
        m = builtin_scenario(names[states % len(names)], rate=float(rng.uniform(0.3, 0.7)))
        space = ActionSpace(m)
        net = PolicyNet(obs_size(m), space.n, hidden=(32, 32), seed=int(rng.integers(1 << 30)))
        net.params *= float(rng.choice([1.0, 10.0, 100.0]))  # sharpen logits
        env = AllocationEnv(m, horizon=2000.0)
        obs, mask = env.reset(int(rng.integers(1 << 30)))
        while not env.done and states < 100_000:
            d = env.sim.possible_assignments()
            feasible = {(r, k.activity) for r, k in d}
            oracle = np.array([p in feasible for p in space.pairs] + [True])
            assert np.array_equal(mask, oracle)
            probs = net.act_probs(obs, mask)
            assert np.all(probs[~mask] == 0.0)
            a = sample_action(probs, rng)
            assert mask[a]
            obs, mask, _, _ = env.step(a)
            states += 1


@pytest.mark.criterion(4, "composites: 23 pairs + postpone = 24 actions; 11 activities per case")
def test_c04_action_space_arithmetic():
    for name in COMPOSITES:
        m = builtin_scenario(name)
        assert len(m.eligible_pairs()) == 23
        assert ActionSpace(m).n == 24
        sim = Simulation(m, seed=1, horizon=2000.0)
        pol = RandomPolicy(0)
        running = sim.advance()
        while running:
            sim.assign(*pol.decide(sim, sim.possible_assignments()))
            running = sim.has_assignment() or sim.advance()
        assert len(sim.completed) > 50
        for case in sim.completed:
            assert len(case.instances) == 11
            assert all(k.state == "complete" for k in case.instances)
        assert all(len(c.instances) <= 11 for c in sim.cases.values())


@pytest.mark.criterion(5, "analytic vs central finite-difference gradients, rel. error <= 1e-4 at 20 points")
def test_c05_gradient_check():
    rng = np.random.default_rng(1)
    m = builtin_scenario("composite")
    n_obs, n_act = obs_size(m), ActionSpace(m).n
    eps = 1e-6
    for point in range(20):
        net = PolicyNet(n_obs, n_act, seed=point)
        net.params += rng.normal(0, 0.05, net.size)
        obs = rng.random(n_obs)
        mask = rng.random(n_act) < 0.5
        mask[-1] = True
        a = int(rng.choice(np.flatnonzero(mask)))
        probs, values, cache = net.forward(obs, mask)
        g_logp = net.backward(cache, np.atleast_2d(np.eye(n_act)[a] - probs[0]), np.zeros(1))
        g_val = net.backward(cache, np.zeros((1, n_act)), np.ones(1))

        def logp():
            return math.log(net.act_probs(obs, mask)[a])

        idx = np.concatenate([rng.choice(net.size, 150, replace=False),
                              np.flatnonzero(np.abs(g_logp) > 1e-3)[:50],
                              np.flatnonzero(np.abs(g_val) > 1e-3)[:50]])
        fd_l, fd_v = np.zeros(len(idx)), np.zeros(len(idx))
        for j, i in enumerate(idx):
            old = net.params[i]
            net.params[i] = old + eps
            lp, vp = logp(), net.value(obs)
            net.params[i] = old - eps
            lm, vm = logp(), net.value(obs)
            net.params[i] = old
            fd_l[j] = (lp - lm) / (2 * eps)
            fd_v[j] = (vp - vm) / (2 * eps)
        for an, fd in ((g_logp[idx], fd_l), (g_val[idx], fd_v)):
            rel = np.linalg.norm(an - fd) / max(np.linalg.norm(an), np.linalg.norm(fd), 1e-12)
            assert rel <= 1e-4, (point, rel)


@pytest.mark.criterion(6, "DRL reward total equals sum of 1/(CT+1) over completed cases (+ penalties)")
def test_c06_reward_reconciliation():
    rng = np.random.default_rng(2)
    for name in ("low_utilization", "parallel", "n_network", "composite", "composite_parallel"):
        for penalty in (0.0, -0.1):
            env = AllocationEnv(builtin_scenario(name), horizon=1500.0, postpone_penalty=penalty)
            obs, mask = env.reset(int(rng.integers(1000)))
            completion_rewards, penalties = [], []
            while not env.done:
                feasible = np.flatnonzero(mask)
                a = int(feasible[-1] if rng.random() < 0.1 else rng.choice(feasible))
                obs, mask, r, _ = env.step(a)
                pen = penalty if a == env.actions.postpone else 0.0
                penalties.append(pen)
                completion_rewards.append(r - pen)
            st = env.sim.stats()
            expected = math.fsum(1.0 / (c + 1.0) for c in st.completed_cycle_times)
            assert st.reward_total == expected
            assert math.isclose(math.fsum(completion_rewards), expected, rel_tol=1e-12)
            assert math.fsum(penalties) == pytest.approx(penalty * env.n_postpones, rel=1e-12)


@pytest.mark.slow
@pytest.mark.criterion(7.1, "(7a) slow server: PPO (<= 2e6 steps) beats SPT, p < 0.05 over 100 reps")
def test_c07a_ppo_beats_spt_on_slow_server():
    m = builtin_scenario("slow_server")
    cfg = ppo_config(PRESETS["desk"])
    assert cfg.max_steps <= 2_000_000
    res = ppo_train(m, cfg, seed=0)
    drl = evaluate(m, DRLPolicy(res.net, m), n=100, base_seed=EVAL_BASE_SEED, name="drl")
    spt = evaluate(m, SPTPolicy(), n=100, base_seed=EVAL_BASE_SEED)
    c = compare(drl, spt)
    print(f"slow server: DRL {drl.mean:.2f} +- {drl.ci_half_width:.2f}, "
          f"SPT {spt.mean:.2f} +- {spt.ci_half_width:.2f}, p = {c.p:.3g}, steps {res.steps}")
    assert drl.mean < spt.mean and c.p < 0.05


@pytest.mark.criterion(7.2, "(7b) parallel: FIFO beats SPT, p < 0.05 over 100 reps")
def test_c07b_fifo_beats_spt_on_parallel():
    m = builtin_scenario("parallel")
    fifo = evaluate(m, FIFOPolicy(), n=100, base_seed=EVAL_BASE_SEED)
    spt = evaluate(m, SPTPolicy(), n=100, base_seed=EVAL_BASE_SEED)
    c = compare(fifo, spt)
    print(f"parallel: FIFO {fifo.mean:.2f}, SPT {spt.mean:.2f}, p = {c.p:.3g}")
    assert fifo.mean < spt.mean and c.p < 0.05


@pytest.mark.criterion(7.3, "(7c) high utilization: SPT beats Random, p < 0.05 over 100 reps")
def test_c07c_spt_beats_random_on_high_utilization():
    m = builtin_scenario("high_utilization")
    spt = evaluate(m, SPTPolicy(), n=100, base_seed=EVAL_BASE_SEED)
    rnd = evaluate(m, RandomPolicy(), n=100, base_seed=EVAL_BASE_SEED)
    c = compare(spt, rnd)
    print(f"high utilization: SPT {spt.mean:.2f}, Random {rnd.mean:.2f}, p = {c.p:.3g}")
    assert spt.mean < rnd.mean and c.p < 0.05


@pytest.mark.slow
@pytest.mark.criterion(8, "slow server under SPT: max utilization >= 0.95 at 0.55, cycle time increasing in rate")
def test_c08_stability_boundary():
    lams = [0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6]
    table = sweep(lambda lam: builtin_scenario("slow_server", rate=lam), lams, {"spt": "spt"}, n=20,
                  base_seed=EVAL_BASE_SEED)
    means = [r.mean for r in table]
    util = {r.lam: max(r.utilization.values()) for r in table}
    print("lam, mean cycle time, max utilization:",
          [(lam, round(mu, 2), round(util[lam], 3)) for lam, mu in zip(lams, means)])
    assert util[0.55] >= 0.95
    assert all(b > a for a, b in zip(means, means[1:]))


@pytest.mark.criterion(9, "BO on (w-30)^2: incumbent within 5 of 30 in >= 95 of 100 runs (20 trials)")
def test_c09_bayes_opt_sanity():
    hits = 0
    for seed in range(100):
        res = minimize(lambda w: float((w[0] - 30.0) ** 2), [(0.0, 100.0)], n_trials=20, n_initial=5, seed=seed)
        hits += abs(res.x[0] - 30.0) <= 5.0
    print(f"BO hits {hits}/100")
    assert hits >= 95


@pytest.mark.criterion(10, "min_cost_matching equals exhaustive search on 1000 instances (<= 4 per side)")
def test_c10_matching_oracle():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        nl, nr = rng.integers(1, 5, size=2)
        density = rng.uniform(0.2, 1.0)
        edges = [(f"u{i}", f"v{j}", float(rng.choice([rng.integers(0, 4), rng.random() * 10])))
                 for i in range(nl) for j in range(nr) if rng.random() < density]
        got = min_cost_matching(edges)
        cost = {(u, v): c for u, v, c in edges}
        assert len({u for u, _ in got}) == len(got) == len({v for _, v in got})
        card, best = brute_force_matching(edges)
        assert len(got) == card
        assert math.isclose(sum(cost[p] for p in got), best, rel_tol=1e-12, abs_tol=1e-12)


@pytest.mark.criterion(11, "fixed-seed commands reproduce byte-identical CSV outputs")
def test_c11_determinism(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    commands = [
        ["evaluate", "--model", "parallel", "n_network", "--policy", "spt", "fifo", "random", "-n", "5",
         "--horizon", "500", "--seed", "7"],
        ["sweep", "--model", "slow_server", "--policy", "spt", "--sweep", "0.3:0.5:0.1", "-n", "3",
         "--horizon", "500", "--seed", "7"],
        ["train", "svfa", "--model", "low_utilization", "--trials", "4", "--sims-per-trial", "2",
         "--horizon", "300", "--seed", "7"],
        ["train", "drl", "--model", "n_network", "--max-steps", "4096", "--horizon", "500", "--seed", "7"],
    ]
    for i, cmd in enumerate(commands):
        outs = []
        for run in ("a", "b"):
            out = tmp_path / f"{i}{run}"
            assert main(cmd + ["--out", str(out)]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        assert outs[0] and outs[0] == outs[1], cmd
    # --jobs does not change results
    a, b = tmp_path / "j1", tmp_path / "j2"
    base = commands[0][:-2] + ["--seed", "7"]
    assert main(base + ["--out", str(a)]) == 0
    assert main(base + ["--jobs", "2", "--out", str(b)]) == 0
    for name in ("replications.csv", "summary.csv", "comparisons.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
