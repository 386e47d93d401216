"""Per-slot task scheduling.

Each service's subproblem is a convex quadratic over a product of
probability simplices (one per source ES that has arrivals). It is solved
with projected gradient descent started from the all-cloud policy, so the
returned objective can never exceed the all-cloud delay.

The descent runs in flow coordinates ``x[m] = N[m] * P[m]``: rows with many
arrivals would otherwise dominate the step size and starve light rows.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numba
import numpy as np

from .delay import ServiceContext, cloud_policy, service_context, slot_delay
from .errors import ConfigError, DimensionError, OracleLimitError, SolverError
from .model import DeploymentPlan, ResourceAllocation, SystemConfig

ORACLE_MAX_FREE = 6
ORACLE_MAX_POINTS = 20_000_000


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 500
    tolerance: float = 1e-7
    initial_step: float = 2.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not 0 < self.shrink < 1:
            raise ConfigError("shrink factor must lie in (0, 1)")


@numba.njit(cache=True)
def _project_row(v, out):
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = 0.0
    theta = 0.0
    for i in range(n):
        css += u[i]
        t = (css - 1.0) / (i + 1)
        if u[i] - t > 0:
            theta = t
    for i in range(n):
        out[i] = max(v[i] - theta, 0.0)


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = 1}``."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError("simplex projection needs a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a non-finite vector")
    out = np.empty_like(v)
    _project_row(v, out)
    return out


def policy_gradient(P, N, ctx: ServiceContext) -> np.ndarray:
    """Gradient of the service delay with respect to the policy entries.

    Columns of servers without the service are not free variables and get 0.
    """
    N = np.asarray(N, dtype=float)
    total = N.sum()
    M = ctx.M
    G = np.zeros((M, M + 1))
    if total == 0:
        return G
    h = ctx.hosts
    L = N @ P[:, :M]
    t = np.where(h[None, :], ctx.transfer_cost(), 0.0)
    q = np.where(h, ctx.queue_cost(), 0.0)
    G[:, :M] = N[:, None] * (t + 2.0 * q[None, :] * L[None, :]) / total
    G[:, :M][:, ~h] = 0.0
    G[:, M] = N * ctx.cloud_cost() / total
    return G


@numba.njit(cache=True)
def _objective(P, N, A, c, cloud, inv_total):
    r, h1 = P.shape
    h = h1 - 1
    val = 0.0
    for k in range(h):
        L = 0.0
        for i in range(r):
            x = N[i] * P[i, k]
            L += x
            val += x * A[i, k]
        val += c[k] * L * L
    for i in range(r):
        val += N[i] * P[i, h] * cloud[i]
    return val * inv_total


@numba.njit(cache=True)
def _pgd(N, A, c, cloud, inv_total, max_iter, tol, step0, shrink, sigma, history):
    r = N.shape[0]
    h = c.shape[0]
    P = np.zeros((r, h + 1))
    P[:, h] = 1.0
    f0 = _objective(P, N, A, c, cloud, inv_total)
    history[0] = f0
    f = f0
    cmax = 0.0
    for k in range(h):
        cmax = max(cmax, c[k])
    # curvature of the objective in flow coordinates
    lip = 2.0 * cmax * r * inv_total
    eta0 = step0 / lip
    G = np.empty((r, h + 1))
    trial = np.empty((r, h + 1))
    L = np.empty(h)
    it = 0
    while it < max_iter:
        for k in range(h):
            s = 0.0
            for i in range(r):
                s += N[i] * P[i, k]
            L[k] = s
        # gradient with respect to flows x = N * P
        for i in range(r):
            for k in range(h):
                G[i, k] = (A[i, k] + 2.0 * c[k] * L[k]) * inv_total
            G[i, h] = cloud[i] * inv_total
        eta = eta0
        accepted = False
        f_new = f
        for _ in range(60):
            for i in range(r):
                _project_row(P[i] - (eta / N[i]) * G[i], trial[i])
            slope = 0.0
            for i in range(r):
                for k in range(h + 1):
                    slope += N[i] * G[i, k] * (trial[i, k] - P[i, k])
            f_new = _objective(trial, N, A, c, cloud, inv_total)
            if f_new <= f + sigma * slope and f_new <= f:
                accepted = True
                break
            eta *= shrink
        it += 1
        if not accepted:
            history[it] = f
            break
        P[:, :] = trial
        delta = f - f_new
        f = f_new
        history[it] = f
        if delta <= tol * abs(f):
            break
    return P, f0, f, it


@dataclass(frozen=True)
class ServiceSolution:
    policy: np.ndarray      # (M, M+1)
    objective: float
    cloud_objective: float
    iterations: int
    history: np.ndarray


def _reduced(ctx: ServiceContext, N: np.ndarray):
    rows = np.flatnonzero(N > 0)
    cols = np.flatnonzero(ctx.hosts)
    A = ctx.transfer_cost()[np.ix_(rows, cols)]
    c = ctx.queue_cost()[cols]
    cloud = ctx.cloud_cost()[rows]
    return rows, cols, np.ascontiguousarray(A), np.ascontiguousarray(c), cloud


def solve_service(ctx: ServiceContext, N, settings: SolverSettings | None = None) -> ServiceSolution:
    """Minimise the expected delay of one service for one slot."""
    settings = settings or SolverSettings()
    N = np.asarray(N)
    M = ctx.M
    P = cloud_policy(M)
    total = N.sum()
    if total == 0:
        return ServiceSolution(P, 0.0, 0.0, 0, np.zeros(1))
    rows, cols, A, c, cloud = _reduced(ctx, N)
    Nr = N[rows].astype(float)
    inv_total = 1.0 / total
    if cols.size == 0:
        f = float(np.sum(Nr * cloud) * inv_total)
        return ServiceSolution(P, f, f, 0, np.array([f]))
    history = np.full(settings.max_iterations + 1, np.nan)
    Pr, f0, f, it = _pgd(Nr, A, c, cloud, inv_total, settings.max_iterations,
                         settings.tolerance, settings.initial_step, settings.shrink,
                         settings.sufficient_decrease, history)
    if not (np.isfinite(f) and np.isfinite(f0)):
        raise SolverError(f"non-finite scheduling objective ({f0}, {f})")
    P[np.ix_(rows, cols)] = Pr[:, :-1]
    P[rows, M] = Pr[:, -1]
    return ServiceSolution(P, float(f), float(f0), int(it), history[: it + 1])


def solve_service_scheduling(j: int, plan: DeploymentPlan, alloc: ResourceAllocation,
                             arrivals: np.ndarray, cfg: SystemConfig,
                             settings: SolverSettings | None = None) -> ServiceSolution:
    if arrivals.shape != (cfg.M, cfg.J) or plan.bits.shape != (cfg.M, cfg.J):
        raise DimensionError("plan/arrivals do not match the configuration")
    return solve_service(service_context(j, alloc, cfg), arrivals[:, j], settings)


def _compositions(n: int, parts: int) -> np.ndarray:
    """All non-negative integer vectors of length ``parts`` summing to ``n``."""
    out = []
    for bars in itertools.combinations(range(n + parts - 1), parts - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(n + parts - 1 - prev - 1)
        out.append(row)
    return np.array(out, dtype=float)


def brute_force_oracle(ctx: ServiceContext, N, grid_step: float = 0.02) -> float:
    """Smallest delay over a regular grid of the feasible policies.

    Exponential in the number of free variables; refuses instances with more
    than six of them.
    """
    N = np.asarray(N, dtype=float)
    total = N.sum()
    if total == 0:
        return 0.0
    rows = np.flatnonzero(N > 0)
    hosts = np.flatnonzero(ctx.hosts)
    h = hosts.size
    free = rows.size * h
    if free > ORACLE_MAX_FREE:
        raise OracleLimitError(f"{free} free variables (max {ORACLE_MAX_FREE})")
    cloud = ctx.cloud_cost()
    if h == 0:
        return float(np.sum(N[rows] * cloud[rows]) / total)
    n = int(round(1.0 / grid_step))
    if n < 1 or abs(n * grid_step - 1.0) > 1e-9:
        raise ValueError("grid_step must divide 1")
    grid = _compositions(n, h + 1) / n
    if float(len(grid)) ** rows.size > ORACLE_MAX_POINTS:
        raise OracleLimitError("grid too large for exhaustive search")
    transfer = ctx.transfer_cost()
    c = ctx.queue_cost()[hosts]
    lin, flows = [], []
    for m in rows:
        x = N[m] * grid
        lin.append(x[:, :h] @ transfer[m, hosts] + x[:, h] * cloud[m])
        flows.append(x[:, :h])
    head = rows.size - 1
    best = np.inf
    # loop over grid points of all rows but the last, broadcast the last
    for combo in itertools.product(*(range(len(grid)) for _ in range(head))):
        base = sum((lin[i][g] for i, g in enumerate(combo)), 0.0)
        L = sum((flows[i][g] for i, g in enumerate(combo)), np.zeros(h)) + flows[-1]
        val = base + lin[-1] + (L ** 2) @ c
        best = min(best, float(val.min()))
    return best / total


@dataclass(frozen=True)
class FrameCosts:
    """Per-task cost coefficients of every service for one frame's deployment.

    ``transfer[j, m, n]`` is S/R (0 on the diagonal, inf towards servers
    without service j), ``queue[j, n]`` is lambda/f (inf where not hosted) and
    ``cloud[j, m]`` the full cloud delay of a task arriving at m.
    """

    transfer: np.ndarray
    queue: np.ndarray
    cloud: np.ndarray
    hosts: np.ndarray       # (J, M) bool

    @classmethod
    def build(cls, alloc: ResourceAllocation, cfg: SystemConfig) -> "FrameCosts":
        ctxs = [service_context(j, alloc, cfg) for j in range(cfg.J)]
        return cls(np.stack([c.transfer_cost() for c in ctxs]),
                   np.stack([c.queue_cost() for c in ctxs]),
                   np.stack([c.cloud_cost() for c in ctxs]),
                   np.ascontiguousarray(alloc.hosts.T))


@numba.njit(cache=True)
def _solve_all(N, transfer, queue, cloud, hosts, max_iter, tol, step0, shrink, sigma):
    M, J = N.shape
    policies = np.zeros((J, M, M + 1))
    obj = np.zeros(J)
    obj0 = np.zeros(J)
    iters = np.zeros(J, dtype=np.int64)
    history = np.empty(max_iter + 1)
    for j in range(J):
        policies[j, :, M] = 1.0
        total = 0.0
        r = 0
        for m in range(M):
            total += N[m, j]
            if N[m, j] > 0:
                r += 1
        if total == 0:
            continue
        h = 0
        for n in range(M):
            if hosts[j, n]:
                h += 1
        rows = np.empty(r, dtype=np.int64)
        cols = np.empty(h, dtype=np.int64)
        a = 0
        for m in range(M):
            if N[m, j] > 0:
                rows[a] = m
                a += 1
        a = 0
        for n in range(M):
            if hosts[j, n]:
                cols[a] = n
                a += 1
        Nr = np.empty(r)
        cl = np.empty(r)
        for i in range(r):
            Nr[i] = N[rows[i], j]
            cl[i] = cloud[j, rows[i]]
        inv_total = 1.0 / total
        if h == 0:
            f = 0.0
            for i in range(r):
                f += Nr[i] * cl[i]
            obj[j] = f * inv_total
            obj0[j] = obj[j]
            continue
        A = np.empty((r, h))
        c = np.empty(h)
        for k in range(h):
            c[k] = queue[j, cols[k]]
            for i in range(r):
                A[i, k] = transfer[j, rows[i], cols[k]]
        P, f0, f, it = _pgd(Nr, A, c, cl, inv_total, max_iter, tol, step0, shrink, sigma, history)
        for i in range(r):
            for k in range(h):
                policies[j, rows[i], cols[k]] = P[i, k]
            policies[j, rows[i], M] = P[i, h]
        obj[j] = f
        obj0[j] = f0
        iters[j] = it
    return policies, obj, obj0, iters


@dataclass(frozen=True)
class SlotSolution:
    policies: np.ndarray          # (J, M, M+1)
    service_objectives: np.ndarray
    cloud_objectives: np.ndarray
    counts: np.ndarray            # tasks per service
    objective: float              # NaN when the slot has no arrivals
    cloud_objective: float
    iterations: np.ndarray

    @property
    def gain(self) -> float:
        if np.isnan(self.objective):
            return 0.0
        return self.cloud_objective - self.objective


def solve_slot(plan: DeploymentPlan, alloc: ResourceAllocation, arrivals: np.ndarray,
               cfg: SystemConfig, settings: SolverSettings | None = None,
               costs: FrameCosts | None = None) -> SlotSolution:
    """Solve every service with arrivals independently and aggregate.

    Pass ``costs`` (built once per frame) to skip recomputing coefficients.
    """
    settings = settings or SolverSettings()
    M, J = cfg.M, cfg.J
    if arrivals.shape != (M, J) or plan.bits.shape != (M, J):
        raise DimensionError(f"arrivals are {arrivals.shape}, expected {(M, J)}")
    costs = costs or FrameCosts.build(alloc, cfg)
    policies, obj, obj0, iters = _solve_all(
        np.ascontiguousarray(arrivals, dtype=float), costs.transfer, costs.queue,
        costs.cloud, costs.hosts, settings.max_iterations, settings.tolerance,
        settings.initial_step, settings.shrink, settings.sufficient_decrease)
    if not (np.all(np.isfinite(obj)) and np.all(np.isfinite(obj0))):
        raise SolverError("non-finite scheduling objective")
    counts = arrivals.sum(axis=0)
    return SlotSolution(policies, obj, obj0, counts, slot_delay(obj, counts),
                        slot_delay(obj0, counts), iters)


def policy_objectives(policies: np.ndarray, arrivals: np.ndarray, costs: FrameCosts) -> np.ndarray:
    """Per-service delay of arbitrary feasible policies, shape (J,)."""
    M, J = arrivals.shape
    N = arrivals.T.astype(float)                      # (J, M)
    flows = N[:, :, None] * policies[:, :, :M]        # (J, M, M)
    transfer = np.where(costs.hosts[:, None, :], costs.transfer, 0.0)
    queue = np.where(costs.hosts, costs.queue, 0.0)
    L = flows.sum(axis=1)
    value = (flows * transfer).sum(axis=(1, 2)) + (queue * L ** 2).sum(axis=1)
    value += (N * policies[:, :, M] * costs.cloud).sum(axis=1)
    total = N.sum(axis=1)
    return np.divide(value, total, out=np.zeros(J), where=total > 0)
