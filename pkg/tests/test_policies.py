import numpy as np
import pytest

from resalloc import Simulation, builtin_scenario, load_model, run_episode
from resalloc.policies import FIFOPolicy, MatchingPolicy, RandomPolicy, SPTPolicy, make_policy

from conftest import MM1_TEXT

TWO_RES = """
name: two
activities: [A, B]
resources: [r1, r2]
eligibility: {A: [r1, r2], B: [r1, r2]}
service_means: {r1: {A: MA1, B: MB1}, r2: {A: MA2, B: MB2}}
routing:
  - {id: start, type: start, to: x}
  - {id: x, type: xor, branches: [{to: A, p: 0.5}, {to: B, p: 0.5}]}
  - {id: A, type: activity, to: end}
  - {id: B, type: activity, to: end}
  - {id: end, type: end}
arrivals: {constant: 0.5}
"""


def two_res(ma1=1.0, mb1=1.0, ma2=2.0, mb2=2.0):
    text = TWO_RES.replace("MA1", str(ma1)).replace("MB1", str(mb1)).replace("MA2", str(ma2)).replace("MB2", str(mb2))
    return load_model(text)


class _FixedGaps:
    def __init__(self, gaps):
        self.gaps = list(gaps)

    def exponential(self, scale):
        return self.gaps.pop(0) if self.gaps else 1e12


def sim_with_cases(model, arrivals, routing_draws=()):
    """Simulation with arrivals at the given times and all resources idle
    once the last one has arrived."""
    from resalloc.sim import _ARRIVAL
    sim = Simulation(model, seed=0, horizon=1e9)
    sim._events.clear()
    gaps = [b - a for a, b in zip(arrivals, arrivals[1:])]
    sim.streams["arrivals"] = _FixedGaps(gaps)
    if routing_draws:
        draws = list(routing_draws)
        sim.streams["routing"] = type("R", (), {"random": lambda self: draws.pop(0)})()
    sim._schedule(arrivals[0], _ARRIVAL, None)
    while sim.n_arrivals < len(arrivals):
        sim._step()
    return sim


def test_spt_picks_argmin():
    sim = sim_with_cases(two_res(), [1.0], [0.1])
    r, k = SPTPolicy().decide(sim, sim.possible_assignments())
    assert r == "r1" and k.activity == "A"


def test_spt_ties_follow_global_order():
    m = two_res(1.0, 1.0, 1.0, 1.0)
    sim = sim_with_cases(m, [1.0, 2.0, 3.0], [0.9, 0.1, 0.1])  # B, A, A
    r, k = SPTPolicy().decide(sim, sim.possible_assignments())
    assert r == "r1" and k.activity == "A" and k.case == 1
    first = sim.possible_assignments().nth(0)
    assert (r, k) == first


def test_spt_invariant_under_creation_time_shift():
    sim = sim_with_cases(two_res(), [1.0, 2.0, 3.0], [0.9, 0.1, 0.6])
    d1 = SPTPolicy().decide(sim, sim.possible_assignments())
    for k in sim.waiting():
        k.created += 1000.0
    d2 = SPTPolicy().decide(sim, sim.possible_assignments())
    assert d1 == d2


def test_fifo_serves_oldest_case():
    sim = sim_with_cases(two_res(), [1.0, 3.0], [0.9, 0.1])  # case0 -> B, case1 -> A
    r, k = FIFOPolicy().decide(sim, sim.possible_assignments())
    assert k.case == 0 and r == "r1"


def test_fifo_skips_unservable_oldest():
    m = builtin_scenario("n_network")
    sim = sim_with_cases(m, [1.0, 2.0], [0.1, 0.9])  # case0 -> I, case1 -> J
    sim.available.discard("r10")
    r, k = FIFOPolicy().decide(sim, sim.possible_assignments())
    assert k.case == 1 and r == "r9"


def test_fifo_picks_fastest_resource():
    sim = sim_with_cases(two_res(ma1=1.4, ma2=1.0), [1.0], [0.1])
    r, k = FIFOPolicy().decide(sim, sim.possible_assignments())
    assert r == "r2"


def test_random_single_pair():
    sim = sim_with_cases(load_model(MM1_TEXT), [1.0])
    assert RandomPolicy(0).decide(sim, sim.possible_assignments())[0] == "r1"


def test_random_uniform_over_four_pairs():
    sim = sim_with_cases(two_res(), [1.0, 2.0], [0.1, 0.1])
    d = sim.possible_assignments()
    assert len(d) == 4
    pol = RandomPolicy(123)
    counts = {}
    pairs = d.pairs()
    for _ in range(100_000):
        r, k = pol.decide(sim, d)
        counts[(r, k.id)] = counts.get((r, k.id), 0) + 1
    freqs = np.array([counts.get((r, k.id), 0) for r, k in pairs]) / 100_000
    assert np.all(np.abs(freqs - 0.25) < 0.01)


def test_random_seed_reproducible():
    m = builtin_scenario("high_utilization")
    a = run_episode(m, RandomPolicy(5), 300, seed=1, record_trace=True)
    b = run_episode(m, RandomPolicy(5), 300, seed=1, record_trace=True)
    assert a.trace == b.trace


def test_matching_two_by_two():
    m = two_res(ma1=1.0, mb1=2.0, ma2=2.0, mb2=4.0)
    sim = sim_with_cases(m, [1.0, 2.0], [0.1, 0.9])  # A then B
    pol = MatchingPolicy()
    r1, k1 = pol.decide(sim, sim.possible_assignments())
    sim.assign(r1, k1)
    r2, k2 = pol.decide(sim, sim.possible_assignments())
    assert {(r1, k1.activity), (r2, k2.activity)} == {("r1", "B"), ("r2", "A")}


def test_matching_leaves_ineligible_resource_unmatched():
    m = builtin_scenario("n_network")
    sim = sim_with_cases(m, [1.0], [0.1])  # one I instance
    r, k = MatchingPolicy().decide(sim, sim.possible_assignments())
    assert r == "r10" and k.activity == "I"


@pytest.mark.parametrize("policy", [SPTPolicy, FIFOPolicy, RandomPolicy, MatchingPolicy])
@pytest.mark.parametrize("name", ["n_network", "parallel", "composite"])
def test_baselines_return_members_of_d_and_never_postpone(policy, name):
    m = builtin_scenario(name)
    pol = policy()
    sim = Simulation(m, seed=2, horizon=400.0)
    running = sim.advance()
    steps = 0
    while running:
        d = sim.possible_assignments()
        dec = pol.decide(sim, d)
        assert dec is not None and dec in d
        sim.assign(*dec)
        running = sim.has_assignment() or sim.advance()
        steps += 1
    assert steps > 50


def test_make_policy_specs(tmp_path):
    m = builtin_scenario("low_utilization")
    assert isinstance(make_policy("spt"), SPTPolicy)
    assert isinstance(make_policy("random:3"), RandomPolicy)
    with pytest.raises(ValueError):
        make_policy("bogus")
    with pytest.raises(ValueError):
        make_policy("svfa", m)
