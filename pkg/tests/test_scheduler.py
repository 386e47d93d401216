import numpy as np
import pytest
from hypothesis import given, strategies as st

from ttosc.delay import ServiceContext, cloud_policy, quadratic_objective, validate_policy
from ttosc.errors import ConfigError, DimensionError, OracleLimitError
from ttosc.harness import random_service_context
from ttosc.model import DeploymentPlan, SystemConfig, derive_allocation
from ttosc.scheduler import (FrameCosts, SolverSettings, brute_force_oracle, policy_gradient,
                             policy_objectives, project_to_simplex, solve_service,
                             solve_service_scheduling, solve_slot)
from ttosc.workload import Workload


def test_projection_fixed_point():
    v = np.array([0.2, 0.5, 0.3])
    assert np.allclose(project_to_simplex(v), v)


def test_projection_by_hand():
    assert np.allclose(project_to_simplex([10.0, 0.0]), [1.0, 0.0])
    assert np.allclose(project_to_simplex([4.0, 4.0, 4.0]), [1 / 3] * 3)


def test_projection_errors():
    with pytest.raises(DimensionError):
        project_to_simplex([])
    with pytest.raises(ValueError):
        project_to_simplex([np.nan, 1.0])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_projection_kkt(v):
    v = np.array(v)
    x = project_to_simplex(v)
    assert np.all(x >= 0) and abs(x.sum() - 1) <= 1e-9
    # v - x is constant on the support and no larger off it
    theta = (v - x)[x > 0]
    assert np.ptp(theta) <= 1e-9
    assert np.all((v - x)[x == 0] <= theta[0] + 1e-9)
    assert np.allclose(project_to_simplex(x), x)


def test_no_hosts_forces_cloud():
    rng = np.random.default_rng(0)
    c = random_service_context(rng, 3, hosts=[False, False, False])
    N = np.array([2, 0, 5])
    sol = solve_service(c, N)
    assert np.array_equal(sol.policy, cloud_policy(3))
    expected = (2 * c.cloud_cost()[0] + 5 * c.cloud_cost()[2]) / 7
    assert sol.objective == pytest.approx(expected)


def test_single_server_boundary_optimum():
    # local delay 1 s at full load, cloud 10 s: minimise p^2 + 10 (1 - p)
    c = ServiceContext(0.0, 1.0, np.array([True]), np.array([1.0]),
                       np.array([[np.inf]]), np.array([1.0]), 0.1)
    sol = solve_service(c, np.array([1]))
    assert sol.policy[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert sol.objective == pytest.approx(1.0, abs=1e-9)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(20):
        M = int(rng.integers(1, 5))
        c = random_service_context(rng, M)
        N = rng.integers(0, 6, M)
        P = rng.random((M, M + 1))
        P[:, :M][:, ~c.hosts] = 0
        P /= P.sum(axis=1, keepdims=True)
        G = policy_gradient(P, N, c)
        eps = 1e-6
        for m in range(M):
            for n in list(np.flatnonzero(c.hosts)) + [M]:
                up, dn = P.copy(), P.copy()
                up[m, n] += eps
                dn[m, n] -= eps
                fd = (quadratic_objective(up, N, c) - quadratic_objective(dn, N, c)) / (2 * eps)
                assert G[m, n] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_solver_beats_grid_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        c = random_service_context(rng, 2)
        N = rng.integers(0, 7, 2)
        N[rng.integers(2)] += 1
        sol = solve_service(c, N)
        assert sol.objective <= brute_force_oracle(c, N, 0.02) + 1e-3
        assert sol.objective <= sol.cloud_objective
        validate_policy(sol.policy, c.hosts)


def test_oracle_vertices_only():
    rng = np.random.default_rng(2)
    c = random_service_context(rng, 2, hosts=[True, True])
    N = np.array([1, 2])
    best = np.inf
    # enumerate every deterministic routing by hand
    for a in range(3):
        for b in range(3):
            P = np.zeros((2, 3))
            P[0, a] = P[1, b] = 1
            best = min(best, quadratic_objective(P, N, c))
    assert brute_force_oracle(c, N, grid_step=1.0) == pytest.approx(best)


def test_oracle_single_point_and_limits():
    rng = np.random.default_rng(4)
    c = random_service_context(rng, 2, hosts=[False, False])
    N = np.array([3, 1])
    assert brute_force_oracle(c, N) == pytest.approx(quadratic_objective(cloud_policy(2), N, c))
    big = random_service_context(rng, 4, hosts=[True] * 4)
    with pytest.raises(OracleLimitError):
        brute_force_oracle(big, np.ones(4))


@given(st.integers(0, 10**6))
def test_descent_is_monotone_and_feasible(seed):
    rng = np.random.default_rng(seed)
    M = int(rng.integers(1, 6))
    c = random_service_context(rng, M)
    N = rng.integers(0, 9, M)
    N[0] += 1
    sol = solve_service(c, N)
    assert np.all(np.diff(sol.history) <= 1e-15)
    assert sol.objective <= sol.cloud_objective
    validate_policy(sol.policy, c.hosts)
    assert np.all(sol.policy[N == 0] == cloud_policy(M)[N == 0])
    assert sol.objective == pytest.approx(quadratic_objective(sol.policy, N, c), rel=1e-9)


@pytest.mark.parametrize("tol", [1e-4, 1e-7, 1e-10])
def test_tolerance_sweep(tol):
    rng = np.random.default_rng(8)
    c = random_service_context(rng, 2, hosts=[True, True])
    N = np.array([4, 3])
    sol = solve_service(c, N, SolverSettings(tolerance=tol))
    assert sol.objective <= brute_force_oracle(c, N, 0.02) + 1e-3


def test_settings_validation():
    with pytest.raises(ConfigError):
        SolverSettings(tolerance=0)
    with pytest.raises(ConfigError):
        SolverSettings(max_iterations=0)


def test_empty_deployment_has_zero_gain():
    cfg = SystemConfig.generate(M=3, J=5, seed=0)
    plan = DeploymentPlan.empty(3, 5)
    N = Workload(cfg, 0).arrivals(0)
    sol = solve_slot(plan, derive_allocation(plan, cfg), N, cfg)
    assert sol.objective == sol.cloud_objective and sol.gain == 0.0


def test_zero_arrivals_skipped():
    cfg = SystemConfig.generate(M=2, J=3, seed=0)
    plan = DeploymentPlan(np.ones((2, 3)))
    cfg = cfg.with_storage(100)
    sol = solve_slot(plan, derive_allocation(plan, cfg), np.zeros((2, 3), int), cfg)
    assert np.isnan(sol.objective) and sol.gain == 0.0


def random_slot(seed):
    rng = np.random.default_rng(seed)
    M, J = int(rng.integers(1, 5)), int(rng.integers(1, 8))
    cfg = SystemConfig.generate(M=M, J=J, seed=seed, storage=int(rng.integers(0, 12)))
    bits = np.zeros((M, J), dtype=np.int8)
    for m in range(M):
        for j in rng.permutation(J):
            if bits[m] @ cfg.data_sizes + cfg.data_sizes[j] <= cfg.storage[m] and rng.random() < 0.6:
                bits[m, j] = 1
    plan = DeploymentPlan(bits)
    return cfg, plan, derive_allocation(plan, cfg), Workload(cfg, seed).arrivals(int(seed % 50))


@given(st.integers(0, 10**6))
def test_slot_gain_nonnegative_and_order_free(seed):
    cfg, plan, alloc, N = random_slot(seed)
    sol = solve_slot(plan, alloc, N, cfg)
    assert sol.gain >= 0
    for j in range(cfg.J):
        validate_policy(sol.policies[j], alloc.hosts[:, j])
    # services solved one at a time, in reverse order, give the same answer
    for j in reversed(range(cfg.J)):
        single = solve_service_scheduling(j, plan, alloc, N, cfg)
        assert single.objective == sol.service_objectives[j]
        assert np.array_equal(single.policy, sol.policies[j])


@given(st.integers(0, 10**6))
def test_vectorised_objectives_agree(seed):
    cfg, plan, alloc, N = random_slot(seed)
    costs = FrameCosts.build(alloc, cfg)
    sol = solve_slot(plan, alloc, N, cfg, costs=costs)
    assert np.allclose(policy_objectives(sol.policies, N, costs), sol.service_objectives,
                       rtol=1e-9, atol=1e-12)


def test_slot_dimension_check():
    cfg, plan, alloc, N = random_slot(1)
    with pytest.raises(DimensionError):
        solve_slot(plan, alloc, N[:, :0], cfg)
