"""Reference deployment and scheduling strategies."""
from __future__ import annotations

from enum import Enum

import numpy as np

from .knapsack import FeasibleSampler, knapsack_select
from .scheduler import FrameCosts


class BaselineKind(str, Enum):
    CLOUD = "cloud"
    POPULARITY = "popularity"
    GREEDY = "greedy"
    RANDOM = "random"


def cloud_only_policy(M: int, J: int) -> np.ndarray:
    """Every task of every service goes to the cloud; shape (J, M, M+1)."""
    P = np.zeros((J, M, M + 1))
    P[:, :, M] = 1.0
    return P


def popularity_deployment(counts, data_sizes, capacity: int) -> np.ndarray:
    """Deploy the most requested services first while storage allows.

    ``counts`` are last frame's requests per service seen by this ES. Ties go
    to the lower service index; services that do not fit are skipped and the
    scan continues down the list. Unrequested services are not deployed.
    """
    counts = np.asarray(counts)
    V = np.asarray(data_sizes)
    action = np.zeros(len(counts), dtype=np.int8)
    room = int(capacity)
    for j in np.argsort(-counts, kind="stable"):
        if counts[j] <= 0:
            break
        if V[j] <= room:
            action[j] = 1
            room -= V[j]
    return action


def greedy_deployment(counts, cloud_delays, cycles, compute: float, data_sizes,
                      capacity: int) -> np.ndarray:
    """Knapsack on the delay a server would save by absorbing last frame's
    requests itself: count * (cloud delay - lambda / F)."""
    value = np.asarray(counts) * (np.asarray(cloud_delays) - np.asarray(cycles) / compute)
    return knapsack_select(value, data_sizes, capacity)


def greedy_schedule(costs: FrameCosts, arrivals: np.ndarray) -> np.ndarray:
    """Route each source's whole load to the cheapest node given the loads
    already committed by lower-indexed sources."""
    M, J = arrivals.shape
    P = cloud_only_policy(M, J)
    for j in range(J):
        hosts = np.flatnonzero(costs.hosts[j])
        if hosts.size == 0:
            continue
        load = np.zeros(M)
        for m in np.flatnonzero(arrivals[:, j]):
            n_m = arrivals[m, j]
            edge = costs.transfer[j, m, hosts] + costs.queue[j, hosts] * (load[hosts] + n_m)
            best = int(np.argmin(edge))
            if edge[best] < costs.cloud[j, m]:
                dest = hosts[best]
                P[j, m, M] = 0.0
                P[j, m, dest] = 1.0
                load[dest] += n_m
    return P


def random_deployment(data_sizes, capacity: int, rng: np.random.Generator,
                      sampler: FeasibleSampler | None = None) -> np.ndarray:
    """Uniformly random deployment among those that fit the storage budget."""
    sampler = sampler or FeasibleSampler(data_sizes, capacity)
    return sampler.sample(rng)
