"""Static system entities, the time grid, and per-frame resource allocation.

Units used throughout: storage in integer units (1 unit = 100 MB by
default), task sizes in megabits, CPU work in gigacycles, compute in
gigacycles/second and link rates in megabits/second, so every delay comes
out in seconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, InfeasibleError

# Stand-in defaults. The original network parameters are not published, so
# these only preserve the qualitative ordering: cloud link slower than the
# inter-ES links, cloud per-task compute above typical per-task edge shares.
DEFAULT_STORAGE = 8
DEFAULT_COMPUTE = 20.0
DEFAULT_BANDWIDTH = 1000.0
DEFAULT_CLOUD_RATE = 100.0
DEFAULT_CLOUD_COMPUTE = 10.0
DEFAULT_SLOTS_PER_FRAME = 10
DEFAULT_FRAMES = 20
TASK_SIZE_RANGE = (4.0, 16.0)
CYCLES_RANGE = (0.1, 1.0)
DATA_SIZE_RANGE = (1, 4)


@dataclass(frozen=True)
class ServiceSpec:
    data_size: int
    task_size: float
    cycles: float

    def __post_init__(self):
        if int(self.data_size) != self.data_size or self.data_size < 1:
            raise ConfigError(f"service data_size must be an integer >= 1, got {self.data_size}")
        if not self.task_size > 0:
            raise ConfigError(f"service task_size must be positive, got {self.task_size}")
        if not self.cycles > 0:
            raise ConfigError(f"service cycles must be positive, got {self.cycles}")
        object.__setattr__(self, "data_size", int(self.data_size))


@dataclass(frozen=True)
class EdgeServerSpec:
    storage: int
    compute: float
    cloud_rate: float

    def __post_init__(self):
        if int(self.storage) != self.storage or self.storage < 0:
            raise ConfigError(f"server storage must be a non-negative integer, got {self.storage}")
        if not self.compute > 0:
            raise ConfigError(f"server compute must be positive, got {self.compute}")
        if not self.cloud_rate > 0:
            raise ConfigError(f"server cloud_rate must be positive, got {self.cloud_rate}")
        object.__setattr__(self, "storage", int(self.storage))


@dataclass(frozen=True)
class NetworkSpec:
    """Inter-ES link rates and the cloud's per-task compute.

    ``bandwidth`` is an M x M matrix; its diagonal is ignored and treated
    as an infinite self-link.
    """

    bandwidth: np.ndarray
    cloud_compute: float

    def __post_init__(self):
        b = np.array(self.bandwidth, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ConfigError("network bandwidth must be a square matrix")
        b[np.diag_indices_from(b)] = np.inf
        if np.any(b <= 0) or np.any(np.isnan(b)):
            raise ConfigError("inter-ES bandwidth must be positive")
        if not self.cloud_compute > 0:
            raise ConfigError("cloud_compute must be positive")
        b.setflags(write=False)
        object.__setattr__(self, "bandwidth", b)

    @classmethod
    def uniform(cls, M: int, bandwidth: float = DEFAULT_BANDWIDTH,
                cloud_compute: float = DEFAULT_CLOUD_COMPUTE) -> "NetworkSpec":
        return cls(np.full((M, M), float(bandwidth)), cloud_compute)


@dataclass(frozen=True)
class WorkloadParams:
    users_low: int = 10
    users_high: int = 50
    zipf_alpha: float = 1.2
    activity: float = 0.3
    rotation_period: int = 5

    def __post_init__(self):
        if self.users_low > self.users_high:
            raise ConfigError("users_low must not exceed users_high")
        if self.users_low < 0:
            raise ConfigError("user counts must be non-negative")
        if self.zipf_alpha < 0:
            raise ConfigError("zipf_alpha must be >= 0")
        if not 0.0 <= self.activity <= 1.0:
            raise ConfigError("activity must lie in [0, 1]")
        if self.rotation_period < 0:
            raise ConfigError("rotation_period must be >= 0")


@dataclass(frozen=True)
class SystemConfig:
    services: tuple[ServiceSpec, ...]
    servers: tuple[EdgeServerSpec, ...]
    network: NetworkSpec
    workload: WorkloadParams = field(default_factory=WorkloadParams)
    K: int = DEFAULT_SLOTS_PER_FRAME
    T: int = DEFAULT_FRAMES
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "servers", tuple(self.servers))
        if self.M < 1 or self.J < 1:
            raise ConfigError("need at least one edge server and one service")
        if self.K < 1 or self.T < 1:
            raise ConfigError("K and T must be >= 1")
        if self.network.bandwidth.shape != (self.M, self.M):
            raise ConfigError(
                f"bandwidth matrix is {self.network.bandwidth.shape}, expected {(self.M, self.M)}")
        if self.M > 1:
            slowest = self.network.bandwidth[~np.eye(self.M, dtype=bool)].min()
            if np.any(self.cloud_rates >= slowest):
                raise ConfigError("cloud link rates must be below every inter-ES rate")

    @property
    def M(self) -> int:
        return len(self.servers)

    @property
    def J(self) -> int:
        return len(self.services)

    @property
    def data_sizes(self) -> np.ndarray:
        return np.array([s.data_size for s in self.services], dtype=np.int64)

    @property
    def task_sizes(self) -> np.ndarray:
        return np.array([s.task_size for s in self.services], dtype=float)

    @property
    def cycles(self) -> np.ndarray:
        return np.array([s.cycles for s in self.services], dtype=float)

    @property
    def storage(self) -> np.ndarray:
        return np.array([s.storage for s in self.servers], dtype=np.int64)

    @property
    def compute(self) -> np.ndarray:
        return np.array([s.compute for s in self.servers], dtype=float)

    @property
    def cloud_rates(self) -> np.ndarray:
        return np.array([s.cloud_rate for s in self.servers], dtype=float)

    @classmethod
    def generate(cls, M: int = 5, J: int = 20, seed: int = 0, *,
                 storage: int = DEFAULT_STORAGE,
                 compute: float = DEFAULT_COMPUTE,
                 bandwidth: float = DEFAULT_BANDWIDTH,
                 cloud_rate: float = DEFAULT_CLOUD_RATE,
                 cloud_compute: float = DEFAULT_CLOUD_COMPUTE,
                 K: int = DEFAULT_SLOTS_PER_FRAME,
                 T: int = DEFAULT_FRAMES,
                 workload: WorkloadParams | None = None) -> "SystemConfig":
        """Homogeneous servers plus services drawn from ``seed``.

        Each service is drawn from its own stream keyed by ``(seed, j)``, so
        the first J services are the same whatever the total J is.
        """
        services = [draw_service(seed, j) for j in range(J)]
        servers = [EdgeServerSpec(storage, compute, cloud_rate) for _ in range(M)]
        return cls(services, servers, NetworkSpec.uniform(M, bandwidth, cloud_compute),
                   workload or WorkloadParams(), K, T, seed)

    def with_servers(self, M: int) -> "SystemConfig":
        """Same services and per-server parameters, M homogeneous servers."""
        proto = self.servers[0]
        off = self.network.bandwidth[~np.eye(self.M, dtype=bool)]
        bw = float(off.min()) if off.size else DEFAULT_BANDWIDTH
        return replace(self, servers=tuple(proto for _ in range(M)),
                       network=NetworkSpec.uniform(M, bw, self.network.cloud_compute))

    def with_services(self, J: int) -> "SystemConfig":
        return replace(self, services=tuple(draw_service(self.seed, j) for j in range(J)))

    def with_storage(self, storage: int) -> "SystemConfig":
        return replace(self, servers=tuple(replace(s, storage=storage) for s in self.servers))

    def with_compute(self, compute: float) -> "SystemConfig":
        return replace(self, servers=tuple(replace(s, compute=compute) for s in self.servers))

    def with_workload(self, **changes) -> "SystemConfig":
        return replace(self, workload=replace(self.workload, **changes))


def draw_service(seed: int, j: int) -> ServiceSpec:
    rng = np.random.default_rng([seed, 7919, j])
    task_size = rng.uniform(*TASK_SIZE_RANGE)
    cycles = rng.uniform(*CYCLES_RANGE)
    data_size = int(rng.integers(DATA_SIZE_RANGE[0], DATA_SIZE_RANGE[1] + 1))
    return ServiceSpec(data_size, task_size, cycles)


def time_index(t: int, k: int, K: int) -> int:
    """Global slot index of slot ``k`` inside frame ``t``."""
    if not 0 <= k < K:
        raise DimensionError(f"slot-in-frame index {k} outside [0, {K})")
    if t < 0:
        raise DimensionError(f"frame index must be >= 0, got {t}")
    return t * K + k


@dataclass(frozen=True)
class DeploymentPlan:
    """Binary M x J matrix; ``bits[m, j] == 1`` iff ES m hosts service j."""

    bits: np.ndarray
    frame: int = 0

    def __post_init__(self):
        b = np.array(self.bits, dtype=np.int8)
        if b.ndim != 2:
            raise DimensionError("deployment bits must be an M x J matrix")
        if np.any((b != 0) & (b != 1)):
            raise DimensionError("deployment bits must be 0 or 1")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @classmethod
    def empty(cls, M: int, J: int, frame: int = 0) -> "DeploymentPlan":
        return cls(np.zeros((M, J), dtype=np.int8), frame)

    @property
    def hosted_counts(self) -> np.ndarray:
        return self.bits.sum(axis=1)


@dataclass(frozen=True)
class Violation:
    server: int
    load: int
    capacity: int


@dataclass(frozen=True)
class DeploymentReport:
    loads: np.ndarray
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def storage_loads(bits: np.ndarray, data_sizes: Sequence[int]) -> np.ndarray:
    return np.asarray(bits, dtype=np.int64) @ np.asarray(data_sizes, dtype=np.int64)


def validate_deployment(plan: DeploymentPlan, cfg: SystemConfig) -> DeploymentReport:
    """Check the per-server storage budget of a deployment plan."""
    if plan.bits.shape != (cfg.M, cfg.J):
        raise DimensionError(f"plan is {plan.bits.shape}, config expects {(cfg.M, cfg.J)}")
    loads = storage_loads(plan.bits, cfg.data_sizes)
    cap = cfg.storage
    bad = tuple(Violation(int(m), int(loads[m]), int(cap[m]))
                for m in np.flatnonzero(loads > cap))
    return DeploymentReport(loads, bad)


@dataclass(frozen=True)
class ResourceAllocation:
    """Equal-split compute and bandwidth derived from a plan.

    ``compute[m, j]`` is zero for services ES m does not host.
    ``rates[j, m, n]`` is the rate for moving service-j tasks from m to n;
    the diagonal is ``inf`` and entries towards non-hosting servers are 0.
    """

    compute: np.ndarray
    rates: np.ndarray
    hosts: np.ndarray


def derive_allocation(plan: DeploymentPlan, cfg: SystemConfig) -> ResourceAllocation:
    report = validate_deployment(plan, cfg)
    if not report.ok:
        worst = ", ".join(f"ES {v.server}: {v.load}>{v.capacity}" for v in report.violations)
        raise InfeasibleError(f"storage exceeded ({worst})")
    d = plan.bits.astype(bool)
    n = d.sum(axis=1)
    share = np.divide(1.0, n, out=np.zeros(cfg.M), where=n > 0)
    compute = np.where(d, (cfg.compute * share)[:, None], 0.0)
    # destination m' splits its ingress bandwidth over the services it hosts
    with np.errstate(invalid="ignore"):     # inf diagonal times zero share
        ingress = cfg.network.bandwidth * share[None, :]
    rates = np.where(d.T[:, None, :], ingress[None, :, :], 0.0)
    idx = np.arange(cfg.M)
    rates[:, idx, idx] = np.inf
    for a in (compute, rates, d):
        a.setflags(write=False)
    return ResourceAllocation(compute, rates, d)
