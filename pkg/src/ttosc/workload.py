"""Task arrivals that vary across cells and over time.

Each cell has a user population drawn once per workload seed. Every user is
active in a slot with probability ``activity`` and asks for one service,
drawn from a Zipf popularity law whose rank order is permuted per cell
(spatial skew) and rotated by one position every ``rotation_period``
frames (temporal drift).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import SystemConfig, WorkloadParams


@dataclass(frozen=True)
class ZipfPopularity:
    J: int
    alpha: float
    pmf: np.ndarray

    @classmethod
    def create(cls, J: int, alpha: float) -> "ZipfPopularity":
        return cls(J, alpha, zipf_pmf(J, alpha))


def zipf_pmf(J: int, alpha: float) -> np.ndarray:
    """Probability of ranks 1..J under a Zipf law with exponent ``alpha``."""
    if J < 1:
        raise ConfigError("Zipf popularity needs at least one service")
    if alpha < 0:
        raise ConfigError("Zipf exponent must be >= 0")
    w = np.arange(1, J + 1, dtype=float) ** -float(alpha)
    return w / w.sum()


def sample_populations(M: int, low: int, high: int, seed: int) -> np.ndarray:
    """Users per cell, i.i.d. uniform integers in ``[low, high]``."""
    if low > high:
        raise ConfigError(f"population bounds inverted: {low} > {high}")
    rng = np.random.default_rng([seed, 1])
    return rng.integers(low, high + 1, size=M)


def cell_permutations(M: int, J: int, seed: int) -> np.ndarray:
    """Row m lists cell m's services from most to least popular."""
    return np.stack([np.random.default_rng([seed, 2, m]).permutation(J) for m in range(M)])


def cell_pmf(pmf: np.ndarray, order: np.ndarray, shift: int = 0) -> np.ndarray:
    """Per-service probabilities for a cell whose rank order is ``order``
    rotated left by ``shift`` positions."""
    out = np.empty_like(pmf)
    out[np.roll(order, -shift)] = pmf
    return out


def generate_arrivals(populations, pmf, activity: float, slot: int, seed: int,
                      orders: np.ndarray | None = None, shift: int = 0) -> np.ndarray:
    """Task counts N[m, j] for one slot.

    Users become active independently with probability ``activity``; active
    users pick a service from their cell's popularity law. The result only
    depends on ``(seed, slot, m)`` for each cell row.
    """
    if not 0.0 <= activity <= 1.0:
        raise ConfigError("activity probability must lie in [0, 1]")
    populations = np.asarray(populations)
    pmf = np.asarray(pmf, dtype=float)
    M, J = len(populations), len(pmf)
    out = np.zeros((M, J), dtype=np.int64)
    for m in range(M):
        rng = np.random.default_rng([seed, 3, slot, m])
        p = pmf if orders is None else cell_pmf(pmf, orders[m], shift)
        active = rng.binomial(int(populations[m]), activity)
        out[m] = rng.multinomial(active, p)
    return out


class Workload:
    """Arrival generator for one episode of a given system."""

    def __init__(self, cfg: SystemConfig, seed: int, params: WorkloadParams | None = None):
        self.params = params or cfg.workload
        self.K = cfg.K
        self.seed = seed
        self.zipf = ZipfPopularity.create(cfg.J, self.params.zipf_alpha)
        self.populations = sample_populations(cfg.M, self.params.users_low,
                                              self.params.users_high, seed)
        self.orders = cell_permutations(cfg.M, cfg.J, seed)

    def shift(self, frame: int) -> int:
        W = self.params.rotation_period
        return frame // W if W > 0 else 0

    def pmf(self, m: int, frame: int = 0) -> np.ndarray:
        return cell_pmf(self.zipf.pmf, self.orders[m], self.shift(frame))

    def arrivals(self, slot: int) -> np.ndarray:
        return generate_arrivals(self.populations, self.zipf.pmf, self.params.activity,
                                 slot, self.seed, self.orders, self.shift(slot // self.K))

    def frame(self, t: int) -> np.ndarray:
        """Arrivals for every slot of frame ``t``, shape (K, M, J)."""
        return np.stack([self.arrivals(t * self.K + k) for k in range(self.K)])


def write_trace(path, trace: dict[int, np.ndarray]) -> None:
    """Write ``{slot: N[m, j]}`` as CSV rows ``slot,m,j,count`` (non-zero only)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "m", "j", "count"])
        for slot in sorted(trace):
            N = trace[slot]
            for m, j in zip(*np.nonzero(N)):
                w.writerow([slot, int(m), int(j), int(N[m, j])])


def read_trace(path, M: int, J: int) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            slot = int(row["slot"])
            N = out.setdefault(slot, np.zeros((M, J), dtype=np.int64))
            N[int(row["m"]), int(row["j"])] = int(row["count"])
    return out
