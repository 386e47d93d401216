"""JSON configuration documents.

A document has four top-level keys::

    {
      "version": 1,
      "system":   {"K": 10, "T": 20, "seed": 0,
                   "services": [{"data_size": 2, "task_size": 9.1, "cycles": 0.4}, ...],
                   "servers":  [{"storage": 8, "compute": 20.0, "cloud_rate": 100.0}, ...],
                   "network":  {"bandwidth": 1000.0 | [[...], ...], "cloud_compute": 10.0},
                   "workload": {"users_low": 10, "users_high": 50, "zipf_alpha": 1.2,
                                "activity": 0.3, "rotation_period": 5}},
      "solver":   {"max_iterations": 500, "tolerance": 1e-7, ...},
      "training": {"gamma": 0.9, "learning_rate": 0.01, ...}
    }

Instead of explicit ``services``/``servers`` lists, ``system`` may give
``"generate": {"M": 5, "J": 20, "storage": 8, ...}`` to draw them from the
seed. Omitted sections take their defaults.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .agent import TrainingConfig
from .errors import ConfigError
from .model import (EdgeServerSpec, NetworkSpec, ServiceSpec, SystemConfig,
                    WorkloadParams)
from .scheduler import SolverSettings

CONFIG_VERSION = 1


@dataclass(frozen=True)
class Config:
    system: SystemConfig = field(default_factory=SystemConfig.generate)
    solver: SolverSettings = field(default_factory=SolverSettings)
    training: TrainingConfig = field(default_factory=TrainingConfig)


def _build(cls, data: dict | None):
    data = data or {}
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def system_to_dict(cfg: SystemConfig) -> dict:
    bw = cfg.network.bandwidth
    off = bw[~np.eye(cfg.M, dtype=bool)]
    bandwidth = float(off[0]) if off.size and np.all(off == off[0]) else \
        [[None if i == j else float(bw[i, j]) for j in range(cfg.M)] for i in range(cfg.M)]
    if cfg.M == 1:
        bandwidth = 1000.0
    return {
        "K": cfg.K, "T": cfg.T, "seed": cfg.seed,
        "services": [asdict(s) for s in cfg.services],
        "servers": [asdict(s) for s in cfg.servers],
        "network": {"bandwidth": bandwidth, "cloud_compute": cfg.network.cloud_compute},
        "workload": asdict(cfg.workload),
    }


def system_from_dict(data: dict) -> SystemConfig:
    data = dict(data)
    workload = _build(WorkloadParams, data.pop("workload", None))
    K = int(data.pop("K", 10))
    T = int(data.pop("T", 20))
    seed = int(data.pop("seed", 0))
    if "generate" in data:
        gen = dict(data.pop("generate"))
        if data:
            raise ConfigError(f"'generate' cannot be combined with {sorted(data)}")
        try:
            return SystemConfig.generate(seed=seed, K=K, T=T, workload=workload, **gen)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    try:
        services = [_build(ServiceSpec, s) for s in data.pop("services")]
        servers = [_build(EdgeServerSpec, s) for s in data.pop("servers")]
    except KeyError as exc:
        raise ConfigError(f"system section lacks {exc}") from None
    net = dict(data.pop("network", {}))
    if data:
        raise ConfigError(f"unknown system fields: {sorted(data)}")
    M = len(servers)
    bw = net.pop("bandwidth", 1000.0)
    if np.isscalar(bw):
        bandwidth = np.full((M, M), float(bw))
    else:
        bandwidth = np.array([[np.inf if v is None else v for v in row] for row in bw], dtype=float)
    network = NetworkSpec(bandwidth, float(net.pop("cloud_compute", 10.0)))
    if net:
        raise ConfigError(f"unknown network fields: {sorted(net)}")
    return SystemConfig(services, servers, network, workload, K, T, seed)


def config_to_dict(cfg: Config) -> dict:
    return {"version": CONFIG_VERSION, "system": system_to_dict(cfg.system),
            "solver": asdict(cfg.solver), "training": asdict(cfg.training)}


def config_from_dict(data: dict) -> Config:
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    unknown = set(data) - {"version", "system", "solver", "training"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    system = system_from_dict(data["system"]) if "system" in data else SystemConfig.generate()
    return Config(system, _build(SolverSettings, data.get("solver")),
                  _build(TrainingConfig, data.get("training")))


def load_config(path) -> Config:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(data)


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
