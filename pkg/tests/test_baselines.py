import numpy as np
import pytest
from hypothesis import given, strategies as st

from ttosc.baselines import (BaselineKind, cloud_only_policy, greedy_deployment,
                             greedy_schedule, popularity_deployment, random_deployment)
from ttosc.delay import cloud_policy, slot_delay, validate_policy
from ttosc.knapsack import FeasibleSampler
from ttosc.model import DeploymentPlan, SystemConfig, derive_allocation
from ttosc.scheduler import FrameCosts, policy_objectives, solve_slot
from ttosc.workload import Workload


def test_kinds():
    assert {k.value for k in BaselineKind} == {"cloud", "popularity", "greedy", "random"}


def test_cloud_policy_feasible_for_any_plan():
    P = cloud_only_policy(3, 4)
    for j in range(4):
        validate_policy(P[j], np.zeros(3, bool))
        assert np.array_equal(P[j], cloud_policy(3))


def test_cloud_policy_delay_is_cloud_delay():
    cfg = SystemConfig.generate(M=3, J=4, seed=0)
    plan = DeploymentPlan.empty(3, 4)
    costs = FrameCosts.build(derive_allocation(plan, cfg), cfg)
    N = Workload(cfg, 0).arrivals(0)
    d = policy_objectives(cloud_only_policy(3, 4), N, costs)
    sol = solve_slot(plan, derive_allocation(plan, cfg), N, cfg)
    assert slot_delay(d, N.sum(axis=0)) == pytest.approx(sol.cloud_objective)


def test_popularity_top_service():
    assert popularity_deployment([0, 9, 0], [2, 2, 2], 4).tolist() == [0, 1, 0]


def test_popularity_slack_deploys_requested():
    assert popularity_deployment([3, 0, 1, 2], [1, 2, 3, 4], 100).tolist() == [1, 0, 1, 1]


def test_popularity_tie_break_by_index():
    assert popularity_deployment([5, 3, 3], [2, 2, 2], 4).tolist() == [1, 1, 0]


def test_popularity_skips_items_that_do_not_fit():
    assert popularity_deployment([5, 4, 3], [2, 3, 1], 3).tolist() == [1, 0, 1]


def test_greedy_deployment_prefers_saved_delay():
    a = greedy_deployment([10, 10], [0.2, 0.2], np.array([1.0, 0.1]), 20.0, [1, 1], 1)
    assert a.tolist() == [0, 1]
    # edge slower than cloud: nothing worth deploying
    none = greedy_deployment([10, 10], [0.01, 0.01], np.array([1.0, 1.0]), 20.0, [1, 1], 2)
    assert not none.any()


def frame_setup(seed, bits):
    cfg = SystemConfig.generate(M=3, J=4, seed=seed, storage=20)
    plan = DeploymentPlan(bits)
    alloc = derive_allocation(plan, cfg)
    return cfg, plan, alloc, FrameCosts.build(alloc, cfg)


def test_greedy_schedule_without_hosts_is_cloud():
    cfg, plan, alloc, costs = frame_setup(0, np.zeros((3, 4), int))
    N = Workload(cfg, 1).arrivals(0)
    assert np.array_equal(greedy_schedule(costs, N), cloud_only_policy(3, 4))


def test_greedy_schedule_uses_fast_server():
    bits = np.zeros((3, 4), int)
    bits[1, 0] = 1
    cfg, plan, alloc, costs = frame_setup(0, bits)
    N = np.zeros((3, 4), int)
    N[0, 0] = 1
    edge = costs.transfer[0, 0, 1] + costs.queue[0, 1]
    assert edge < costs.cloud[0, 0]
    P = greedy_schedule(costs, N)
    assert P[0, 0, 1] == 1.0 and P[0, 0, 3] == 0.0


def random_bits(rng, cfg):
    return np.stack([FeasibleSampler(cfg.data_sizes, c).sample(rng) for c in cfg.storage])


@given(st.integers(0, 10**6))
def test_solver_never_worse_than_greedy_routing(seed):
    rng = np.random.default_rng(seed)
    cfg = SystemConfig.generate(M=int(rng.integers(1, 5)), J=6, seed=seed,
                                storage=int(rng.integers(0, 10)))
    plan = DeploymentPlan(random_bits(rng, cfg))
    alloc = derive_allocation(plan, cfg)
    costs = FrameCosts.build(alloc, cfg)
    N = Workload(cfg, seed).arrivals(0)
    P = greedy_schedule(costs, N)
    for j in range(cfg.J):
        validate_policy(P[j], alloc.hosts[:, j])
    greedy = policy_objectives(P, N, costs)
    sol = solve_slot(plan, alloc, N, cfg, costs=costs)
    assert np.all(sol.service_objectives <= greedy + 1e-7 * (1 + greedy))


@given(st.integers(0, 10**6), st.integers(0, 30))
def test_baseline_deployments_feasible(seed, C):
    rng = np.random.default_rng(seed)
    V = rng.integers(1, 5, 12)
    counts = rng.integers(0, 20, 12)
    assert popularity_deployment(counts, V, C) @ V <= C
    assert greedy_deployment(counts, rng.random(12), rng.random(12), 20.0, V, C) @ V <= C
    assert random_deployment(V, C, rng) @ V <= C


def test_random_deployment_seeded():
    V = np.arange(1, 11)
    a = random_deployment(V, 12, np.random.default_rng(5))
    b = random_deployment(V, 12, np.random.default_rng(5))
    assert np.array_equal(a, b)
