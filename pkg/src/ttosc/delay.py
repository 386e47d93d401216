"""Expected task processing delay of a scheduling policy.

A scheduling policy for service j is an M x (M+1) row-stochastic matrix
``P``: ``P[m, n]`` is the probability that a task arriving at ES m is
processed on ES n, the last column being the cloud. Tasks of one service
that land on the same ES share that service's compute equally, using the
expected load ``L[n] = sum_m N[m] P[m, n]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InfeasibleError
from .model import ResourceAllocation, SystemConfig

ROW_TOL = 1e-9


@dataclass(frozen=True)
class ServiceContext:
    """Frame-constant quantities for one service."""

    task_size: float
    cycles: float
    hosts: np.ndarray           # (M,) bool
    compute: np.ndarray         # (M,) per-service share, 0 where not hosted
    rates: np.ndarray           # (M, M), inf on the diagonal
    cloud_rates: np.ndarray     # (M,)
    cloud_compute: float

    @property
    def M(self) -> int:
        return len(self.hosts)

    def transfer_cost(self) -> np.ndarray:
        """Per-task transmission delay S/R for every (source, host) pair;
        zero on the diagonal, inf towards non-hosting servers."""
        with np.errstate(divide="ignore"):
            t = self.task_size / self.rates
        t[:, ~self.hosts] = np.inf
        return t

    def queue_cost(self) -> np.ndarray:
        """lambda / f per host (inf where not hosted)."""
        with np.errstate(divide="ignore"):
            return np.where(self.hosts, self.cycles / np.where(self.hosts, self.compute, 1.0), np.inf)

    def cloud_cost(self) -> np.ndarray:
        return self.task_size / self.cloud_rates + self.cycles / self.cloud_compute


def service_context(j: int, alloc: ResourceAllocation, cfg: SystemConfig) -> ServiceContext:
    svc = cfg.services[j]
    return ServiceContext(svc.task_size, svc.cycles, alloc.hosts[:, j],
                          alloc.compute[:, j], alloc.rates[j], cfg.cloud_rates,
                          cfg.network.cloud_compute)


def cloud_policy(M: int) -> np.ndarray:
    P = np.zeros((M, M + 1))
    P[:, M] = 1.0
    return P


def validate_policy(P: np.ndarray, hosts: np.ndarray, tol: float = ROW_TOL) -> None:
    """Raise unless ``P`` is row-stochastic and only routes to hosts or cloud."""
    P = np.asarray(P)
    M = len(hosts)
    if P.shape != (M, M + 1):
        raise DimensionError(f"policy is {P.shape}, expected {(M, M + 1)}")
    if np.any(P < -tol) or np.any(P > 1 + tol):
        raise InfeasibleError("policy entries must lie in [0, 1]")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > tol):
        raise InfeasibleError("policy rows must sum to 1")
    if np.any(P[:, :M][:, ~np.asarray(hosts, bool)] != 0):
        raise InfeasibleError("policy routes tasks to a server without the service")


def expected_loads(P: np.ndarray, N: np.ndarray) -> np.ndarray:
    M = len(N)
    return np.asarray(N, dtype=float) @ P[:, :M]


def pair_delay(m: int, n: int, load: float, ctx: ServiceContext) -> float:
    """Delay of a task moved from ES m to ES n, which carries ``load`` tasks."""
    if not ctx.hosts[n]:
        raise InfeasibleError(f"ES {n} does not host the service")
    f = ctx.compute[n]
    if not f > 0:
        raise InfeasibleError(f"ES {n} has no compute for the service")
    transfer = 0.0 if m == n else ctx.task_size / ctx.rates[m, n]
    return transfer + ctx.cycles * load / f


def cloud_delay(m: int, ctx: ServiceContext) -> float:
    return ctx.task_size / ctx.cloud_rates[m] + ctx.cycles / ctx.cloud_compute


def source_delay(m: int, P: np.ndarray, N: np.ndarray, ctx: ServiceContext) -> float:
    validate_policy(P, ctx.hosts)
    L = expected_loads(P, N)
    total = P[m, ctx.M] * cloud_delay(m, ctx)
    for n in np.flatnonzero(ctx.hosts):
        if P[m, n] > 0:
            total += P[m, n] * pair_delay(m, n, L[n], ctx)
    return total


def service_delay(P: np.ndarray, N: np.ndarray, ctx: ServiceContext) -> float:
    """Arrival-weighted mean of the per-source delays; 0 when nothing arrives."""
    N = np.asarray(N)
    total = N.sum()
    if total == 0:
        return 0.0
    return sum(N[m] / total * source_delay(m, P, N, ctx) for m in np.flatnonzero(N))


def quadratic_objective(P: np.ndarray, N: np.ndarray, ctx: ServiceContext) -> float:
    """The same quantity as :func:`service_delay`, written as a convex
    quadratic in ``P``: linear transfer and cloud terms plus
    ``(lambda/f) L^2`` per host."""
    N = np.asarray(N, dtype=float)
    total = N.sum()
    if total == 0:
        return 0.0
    M = ctx.M
    h = ctx.hosts
    flows = N[:, None] * P[:, :M]
    L = flows.sum(axis=0)
    transfer = ctx.transfer_cost()[:, h]
    value = np.sum(flows[:, h] * transfer)
    value += np.sum(ctx.queue_cost()[h] * L[h] ** 2)
    value += np.sum(N * P[:, M] * ctx.cloud_cost())
    return float(value / total)


def slot_delay(service_delays, counts) -> float:
    """Task-weighted mean over services; NaN marks a slot without arrivals."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total == 0:
        return math.nan
    active = counts > 0
    return float(np.sum(counts[active] / total * np.asarray(service_delays)[active]))


def time_average(slot_delays) -> float:
    """Mean over slots that had arrivals (NaN entries are skipped)."""
    d = np.asarray(list(slot_delays), dtype=float)
    d = d[~np.isnan(d)]
    if d.size == 0:
        raise ValueError("no slot with arrivals to average over")
    return float(d.mean())


@dataclass(frozen=True)
class DelayReport:
    slot: int
    pair: np.ndarray      # (J, M, M) host delays, NaN where not hosted
    source: np.ndarray    # (J, M)
    service: np.ndarray   # (J,)
    total: float

    def rows(self):
        for j, d in enumerate(self.service):
            yield self.slot, j, float(d), self.total


def delay_report(policies: np.ndarray, arrivals: np.ndarray, alloc: ResourceAllocation,
                 cfg: SystemConfig, slot: int = 0) -> DelayReport:
    """Evaluate every service of one slot directly from the delay definitions."""
    M, J = cfg.M, cfg.J
    pair = np.full((J, M, M), np.nan)
    source = np.zeros((J, M))
    service = np.zeros(J)
    for j in range(J):
        ctx = service_context(j, alloc, cfg)
        P, N = policies[j], arrivals[:, j]
        L = expected_loads(P, N)
        for n in np.flatnonzero(ctx.hosts):
            for m in range(M):
                pair[j, m, n] = pair_delay(m, n, L[n], ctx)
        for m in range(M):
            source[j, m] = source_delay(m, P, N, ctx)
        service[j] = service_delay(P, N, ctx)
    total = slot_delay(service, arrivals.sum(axis=0))
    return DelayReport(slot, pair, source, service, total)


def write_report_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "service", "service_delay", "slot_delay"])
        for rep in reports:
            for row in rep.rows():
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
