"""0/1 knapsack over service partial values.

Used both for greedy action selection (maximise the summed partial values
of deployed services under a storage budget) and for drawing uniformly
random feasible deployments.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError


def _check(V, C):
    V = np.asarray(V, dtype=np.int64)
    if C < 0:
        raise ConfigError(f"negative knapsack capacity {C}")
    if np.any(V < 0):
        raise ConfigError("item sizes must be non-negative")
    return V, int(C)


def knapsack_select_batch(O: np.ndarray, V, C: int) -> np.ndarray:
    """Row-wise exact knapsack for a batch of value vectors.

    Returns an int8 matrix of actions. Among optimal actions the
    lexicographically smallest one is returned, so an item is only packed
    when it strictly improves the value; items with non-positive value are
    therefore never selected.
    """
    V, C = _check(V, C)
    O = np.asarray(O, dtype=float)
    if O.ndim != 2 or O.shape[1] != V.size:
        raise DimensionError(f"values {O.shape} do not match {V.size} items")
    B, J = O.shape
    # best[:, j, c]: best value using items j.. with capacity c
    best = np.zeros((B, J + 1, C + 1))
    for j in range(J - 1, -1, -1):
        best[:, j] = best[:, j + 1]
        v = V[j]
        if v <= C:
            take = O[:, j, None] + best[:, j + 1, : C + 1 - v]
            np.maximum(best[:, j, v:], take, out=best[:, j, v:])
    action = np.zeros((B, J), dtype=np.int8)
    cap = np.full(B, C)
    rows = np.arange(B)
    for j in range(J):
        v = V[j]
        fits = cap >= v
        with_j = np.where(fits, O[:, j] + best[rows, j + 1, np.where(fits, cap - v, 0)], -np.inf)
        take = with_j > best[rows, j + 1, cap]
        action[take, j] = 1
        cap = cap - np.where(take, v, 0)
    return action


def knapsack_select(O, V, C: int) -> np.ndarray:
    """Action maximising ``sum(a * O)`` subject to ``sum(a * V) <= C``."""
    return knapsack_select_batch(np.asarray(O, dtype=float)[None, :], V, C)[0]


def q_value(O, a) -> float:
    O = np.asarray(O, dtype=float)
    a = np.asarray(a)
    if O.shape != a.shape:
        raise DimensionError("action and value vectors differ in length")
    return float(np.dot(a.astype(float), O))


def exhaustive_select(O, V, C: int) -> np.ndarray:
    """Brute-force reference over all 2^J actions (lexicographic order)."""
    O = np.asarray(O, dtype=float)
    V = np.asarray(V, dtype=np.int64)
    J = O.size
    if J > 20:
        raise ValueError("exhaustive search limited to 20 items")
    codes = np.arange(2 ** J)
    bits = ((codes[:, None] >> np.arange(J - 1, -1, -1)) & 1).astype(np.int8)
    values = bits @ O
    values[bits @ V > C] = -np.inf
    return bits[int(np.argmax(values))]


class FeasibleSampler:
    """Uniform sampler over all deployments that fit a storage budget.

    ``count[j, c]`` is the number of feasible subsets of items ``j..`` with
    remaining capacity ``c``; items are then decided left to right with the
    matching conditional probabilities.
    """

    def __init__(self, V, C: int):
        self.V, self.C = _check(V, C)
        J = self.V.size
        count = np.zeros((J + 1, self.C + 1))
        count[J] = 1.0
        for j in range(J - 1, -1, -1):
            count[j] = count[j + 1]
            v = self.V[j]
            if v <= self.C:
                count[j, v:] += count[j + 1, : self.C + 1 - v]
        self.count = count

    @property
    def n_feasible(self) -> int:
        return int(self.count[0, self.C])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        J = self.V.size
        u = rng.random(J)
        action = np.zeros(J, dtype=np.int8)
        cap = self.C
        for j in range(J):
            v = self.V[j]
            if v <= cap and u[j] * self.count[j, cap] < self.count[j + 1, cap - v]:
                action[j] = 1
                cap -= v
        return action


def random_feasible_action(V, C: int, rng: np.random.Generator) -> np.ndarray:
    return FeasibleSampler(V, C).sample(rng)
