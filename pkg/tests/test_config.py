import json

import numpy as np
import pytest

from ttosc.agent import TrainingConfig
from ttosc.config import (Config, config_from_dict, config_to_dict, load_config,
                          save_config, system_from_dict)
from ttosc.errors import ConfigError
from ttosc.model import SystemConfig
from ttosc.scheduler import SolverSettings


def test_round_trip(tmp_path):
    cfg = Config(SystemConfig.generate(M=3, J=6, seed=4), SolverSettings(tolerance=1e-6),
                 TrainingConfig(gamma=0.5, hidden=16))
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back.solver == cfg.solver and back.training == cfg.training
    a, b = cfg.system, back.system
    assert np.array_equal(a.data_sizes, b.data_sizes) and np.allclose(a.cycles, b.cycles)
    assert np.array_equal(a.network.bandwidth, b.network.bandwidth)
    assert a.workload == b.workload and (a.K, a.T, a.seed) == (b.K, b.T, b.seed)


def test_bandwidth_matrix_with_null_diagonal():
    base = config_to_dict(Config(SystemConfig.generate(M=2, J=2)))
    base["system"]["network"]["bandwidth"] = [[None, 500.0], [800.0, None]]
    sysc = config_from_dict(base).system
    assert sysc.network.bandwidth[0, 1] == 500.0 and sysc.network.bandwidth[1, 0] == 800.0
    assert np.isinf(sysc.network.bandwidth[0, 0])


def test_generate_form():
    sysc = system_from_dict({"seed": 3, "K": 4, "generate": {"M": 2, "J": 5, "storage": 6}})
    assert (sysc.M, sysc.J, sysc.K) == (2, 5, 4)
    assert np.all(sysc.storage == 6)
    assert np.array_equal(sysc.cycles, SystemConfig.generate(M=2, J=5, seed=3, storage=6).cycles)


def test_defaults_when_sections_missing():
    cfg = config_from_dict({"version": 1})
    assert cfg.training == TrainingConfig() and cfg.solver == SolverSettings()


@pytest.mark.parametrize("doc", [
    {"version": 2},
    {"bogus": {}},
    {"training": {"gama": 0.9}},
    {"training": {"gamma": 1.5}},
    {"solver": {"tolerance": -1}},
    {"system": {"generate": {"M": 2, "J": 2}, "services": []}},
    {"system": {"generate": {"M": 2, "J": 2, "colour": 1}}},
    {"system": {"services": [{"data_size": 1, "task_size": 1, "cycles": 1}]}},
])
def test_invalid_documents(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_saved_file_is_plain_json(tmp_path):
    save_config(Config(SystemConfig.generate(M=2, J=3)), tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    assert doc["version"] == 1 and len(doc["system"]["services"]) == 3
