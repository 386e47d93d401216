import json

import numpy as np
import pytest

from ttosc.agent import TrainingConfig
from ttosc.errors import ConfigError
from ttosc.harness import (SCHEMES, ExperimentSpec, apply_axis, bench, oracle_check, plotdata,
                           read_csv, run_baseline, run_scheme, run_ttosc, smooth, sweep)
from ttosc.model import SystemConfig

TINY = TrainingConfig(hidden=8, batch_size=4, buffer_capacity=40, target_period=2)


def tiny_cfg(**kw):
    return SystemConfig.generate(M=kw.pop("M", 2), J=kw.pop("J", 4), seed=1, K=3, T=4, **kw)


def test_smooth_examples():
    assert np.allclose(smooth([1.0, 5.0, 2.0], 1), [1, 5, 2])
    assert np.allclose(smooth([3.0] * 7, 4), 3.0)
    assert np.allclose(smooth([0.0, 10.0, 0.0], 3), [5, 10 / 3, 5])
    with pytest.raises(ValueError):
        smooth([], 3)
    with pytest.raises(ValueError):
        smooth([1.0], 0)


def test_smooth_against_loop():
    rng = np.random.default_rng(0)
    x = rng.normal(size=37)
    for W in (2, 5, 10, 50):
        lo, hi = W // 2, W - W // 2 - 1
        ref = [x[max(0, i - lo): i + hi + 1].mean() for i in range(x.size)]
        assert np.allclose(smooth(x, W), ref)


def test_smallest_ttosc_run_completes():
    cfg = SystemConfig.generate(M=1, J=2, seed=0, K=2, T=2)
    res = run_ttosc(cfg, 1, 0, training=TINY)
    assert len(res.recorder.frames) == 2 and len(res.recorder.slots) == 4
    assert all(row[-1] >= 0 for row in res.recorder.slots)


def test_rewards_and_gains_nonnegative():
    cfg = tiny_cfg()
    res = run_ttosc(cfg, 6, 3, training=TINY, eval_episodes=2)
    assert all(f[3] >= 0 for f in res.recorder.frames)
    assert all(s[7] >= 0 for s in res.recorder.slots)
    assert all(e.min_gain >= 0 for e in res.recorder.episodes)
    assert np.isfinite([e.mean_loss for e in res.stats()[2:]]).all()
    agent = res.controller.agents[0]
    assert agent.updates > 0 and len(agent.buffer) == 6 * (cfg.T - 1)


def test_actions_always_feasible():
    cfg = tiny_cfg(storage=3)
    res = run_ttosc(cfg, 4, 0, training=TINY)
    ctrl = res.controller
    for a in ctrl.agents:
        acts = a.buffer.actions[: len(a.buffer)]
        assert np.all(acts @ cfg.data_sizes <= a.C)


def test_shared_reward_across_agents():
    cfg = tiny_cfg(M=3)
    res = run_ttosc(cfg, 2, 0, training=TINY)
    bufs = [a.buffer for a in res.controller.agents]
    assert all(np.array_equal(b.rewards[: len(b)], bufs[0].rewards[: len(bufs[0])]) for b in bufs)


def test_cloud_baseline_equals_cloud_delay():
    cfg = tiny_cfg()
    res = run_baseline(cfg, "cloud", 2, 0)
    for e in res.stats():
        assert e.delay == e.cloud_delay and e.mean_reward == 0


@pytest.mark.parametrize("scheme", SCHEMES)
def test_every_scheme_runs(scheme):
    res = run_scheme(tiny_cfg(), scheme, 2, 0, training=TINY, eval_episodes=1)
    assert len(res.stats("eval")) == 1
    assert np.isfinite(res.final_delay())


def test_baseline_rejects_ttosc():
    with pytest.raises(ConfigError):
        run_baseline(tiny_cfg(), "ttosc", 1)
    with pytest.raises(ConfigError):
        run_scheme(tiny_cfg(), "ddpg", 1)


def test_run_outputs_are_deterministic(tmp_path):
    cfg = tiny_cfg()
    for name in ("a", "b"):
        run_ttosc(cfg, 3, 7, training=TINY, eval_episodes=1, output_dir=tmp_path / name)
    for f in ("slots.csv", "frames.csv", "episodes.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    header = (tmp_path / "a" / "slots.csv").read_text().splitlines()[0]
    assert header == "phase,episode,frame,slot,tasks,delay,cloud_delay,gain"
    assert (tmp_path / "a" / "agents.npz").exists()
    timings = read_csv(tmp_path / "a" / "timings.csv")
    assert all(float(r["schedule_seconds"]) > 0 for r in timings)


def test_baseline_determinism(tmp_path):
    cfg = tiny_cfg()
    for name in ("a", "b"):
        run_baseline(cfg, "random", 2, 5, output_dir=tmp_path / name)
    assert (tmp_path / "a/slots.csv").read_bytes() == (tmp_path / "b/slots.csv").read_bytes()


def test_evaluation_independent_of_training_rng():
    cfg = tiny_cfg()
    a = run_baseline(cfg, "popularity", 0, 2, eval_episodes=2)
    b = run_baseline(cfg, "popularity", 3, 2, eval_episodes=2)
    assert [e.delay for e in a.stats("eval")] == [e.delay for e in b.stats("eval")]


def test_apply_axis():
    cfg = SystemConfig.generate(M=3, J=5, seed=0)
    assert apply_axis(cfg, "cells", 6).M == 6
    assert apply_axis(cfg, "services", 8).J == 8
    assert apply_axis(cfg, "zipf", 2.0).workload.zipf_alpha == 2.0
    assert np.all(apply_axis(cfg, "storage", 3).storage == 3)
    assert np.all(apply_axis(cfg, "compute", 40).compute == 40)
    w = apply_axis(cfg, "users", 50).workload
    assert (w.users_low, w.users_high) == (30, 70)
    with pytest.raises(ConfigError):
        apply_axis(cfg, "height", 1)


def test_experiment_spec_validation():
    with pytest.raises(ConfigError):
        ExperimentSpec(seeds=())
    with pytest.raises(ConfigError):
        ExperimentSpec(axis="zipf", values=(1.0, float("inf")))
    with pytest.raises(ConfigError):
        ExperimentSpec(scheme="dqn")


def test_sweep_and_plotdata(tmp_path):
    spec = ExperimentSpec("popularity", 2, (0, 1), 1, "zipf", (0.8, 2.0), str(tmp_path / "sw"))
    rows = sweep(tiny_cfg(), spec)
    assert [(r[1], r[3]) for r in rows] == [(0.8, 0), (0.8, 1), (2.0, 0), (2.0, 1)]
    run_ttosc(tiny_cfg(), 3, 0, training=TINY, output_dir=tmp_path / "sw" / "conv")
    out = plotdata(tmp_path / "sw", tmp_path / "plots", window=2)
    trends = read_csv(out["trends"])
    assert len(trends) == 2 and all(r["seeds"] == "2" for r in trends)
    conv = read_csv(out["convergence"])
    assert {r["run"] for r in conv} >= {"conv"}


def test_bench_report():
    rep = bench(tiny_cfg(), training=TINY, frames=2)
    assert rep["slot_median_s"] > 0 and rep["deploy_median_s"] > 0


def test_oracle_check_small():
    rep = oracle_check(5, 20, seed=1)
    assert rep["ok"] and rep["schedule_failures"] == 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")   # the blow-up is the point
def test_divergence_dumps_diagnostics(tmp_path):
    cfg = tiny_cfg()
    bad = TrainingConfig(hidden=8, batch_size=2, buffer_capacity=10, learning_rate=1e12)
    from ttosc.errors import DivergenceError
    with pytest.raises(DivergenceError):
        run_ttosc(cfg, 20, 0, training=bad, output_dir=tmp_path / "run")
    summary = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert summary["failed"] is True
