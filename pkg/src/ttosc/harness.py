"""Episode loops, metric records and experiment helpers.

An episode is one fresh T-frame rollout: new user populations, new cell
permutations and new arrivals, drawn from a workload seed derived from the
run seed, the phase (training or evaluation) and the episode index. Agent
weights and replay buffers persist across episodes.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import DeploymentAgent, TrainingConfig, epsilon_at, save_checkpoint
from .baselines import (cloud_only_policy, greedy_deployment, greedy_schedule,
                        popularity_deployment)
from .delay import ServiceContext, slot_delay, time_average
from .errors import ConfigError, DivergenceError
from .knapsack import FeasibleSampler, exhaustive_select, knapsack_select, q_value
from .model import DeploymentPlan, SystemConfig, derive_allocation
from .scheduler import (FrameCosts, SolverSettings, brute_force_oracle, policy_objectives,
                        solve_service, solve_slot)
from .workload import Workload

log = logging.getLogger(__name__)

SCHEMES = ("ttosc", "cloud", "popularity", "greedy", "random")
SWEEP_AXES = ("cells", "services", "zipf", "storage", "compute", "users")
TRAIN, EVAL = "train", "eval"
_PHASE_KEY = {TRAIN: 0, EVAL: 1}

SLOT_FIELDS = ["phase", "episode", "frame", "slot", "tasks", "delay", "cloud_delay", "gain"]
FRAME_FIELDS = ["phase", "episode", "frame", "reward", "loss", "epsilon", "deployed"]
EPISODE_FIELDS = ["phase", "episode", "epsilon", "mean_reward", "delay", "cloud_delay",
                  "min_gain", "mean_loss"]
TIMING_FIELDS = ["phase", "episode", "frame", "deploy_seconds", "schedule_seconds"]


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def workload_seed(seed: int, phase: str, episode: int) -> int:
    return derive_seed(seed, _PHASE_KEY[phase], episode)


# ---------------------------------------------------------------- controllers

class Controller:
    """Deployment (and optionally scheduling) strategy driven by the loop."""

    scheduling = "convex"       # or "greedy" / "cloud"

    def __init__(self, cfg: SystemConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.samplers = [FeasibleSampler(cfg.data_sizes, c) for c in cfg.storage]
        self.rng = np.random.default_rng([seed, 21])
        self.epsilon = 0.0
        self.phase = TRAIN

    def begin_episode(self, phase: str, episode: int) -> None:
        self.phase = phase
        self.rng = np.random.default_rng([self.seed, 21 + _PHASE_KEY[phase], episode])

    def random_plan(self) -> np.ndarray:
        return np.stack([s.sample(self.rng) for s in self.samplers])

    def deploy(self, t: int, previous: np.ndarray | None) -> np.ndarray:
        raise NotImplementedError

    def feedback(self, previous, bits, reward: float, current, training: bool) -> float:
        return float("nan")


class CloudController(Controller):
    scheduling = "cloud"

    def deploy(self, t, previous):
        return np.zeros((self.cfg.M, self.cfg.J), dtype=np.int8)


class RandomController(Controller):
    def deploy(self, t, previous):
        return self.random_plan()


class PopularityController(Controller):
    def deploy(self, t, previous):
        if previous is None:
            return self.random_plan()
        counts = previous.sum(axis=0)
        return np.stack([popularity_deployment(counts[m], self.cfg.data_sizes, C)
                         for m, C in enumerate(self.cfg.storage)])


class GreedyController(Controller):
    scheduling = "greedy"

    def __init__(self, cfg, seed):
        super().__init__(cfg, seed)
        self.cloud = (cfg.task_sizes[None, :] / cfg.cloud_rates[:, None]
                      + cfg.cycles[None, :] / cfg.network.cloud_compute)

    def deploy(self, t, previous):
        if previous is None:
            return self.random_plan()
        cfg = self.cfg
        counts = previous.sum(axis=0)
        return np.stack([greedy_deployment(counts[m], self.cloud[m], cfg.cycles, cfg.compute[m],
                                           cfg.data_sizes, cfg.storage[m])
                         for m in range(cfg.M)])


class TTOSCController(Controller):
    """One DDQN agent per edge server with a shared frame reward."""

    def __init__(self, cfg: SystemConfig, seed: int, training: TrainingConfig | None = None):
        super().__init__(cfg, seed)
        self.training = training or TrainingConfig()
        self.agents = [DeploymentAgent(cfg.J, cfg.K, cfg.data_sizes, cfg.storage[m],
                                       self.training, derive_seed(seed, 100, m))
                       for m in range(cfg.M)]
        tr = self.training
        if not tr.normalize_observations:
            self.scale = 1.0
        elif tr.observation_scale is not None:
            self.scale = tr.observation_scale
        else:
            self.scale = 1.0 / cfg.workload.users_high
        self.frames_trained = 0

    def observations(self, arrivals: np.ndarray) -> np.ndarray:
        """Per-agent views (M, K, J) of one frame's local arrivals."""
        return np.transpose(arrivals, (1, 0, 2)) * self.scale

    def deploy(self, t, previous):
        if previous is None:
            if self.phase == EVAL:
                # keep the agents' own streams untouched
                return self.random_plan()
            return np.stack([a.random_action() for a in self.agents])
        obs = self.observations(previous)
        return np.stack([a.select_action(obs[m], self.epsilon) for m, a in enumerate(self.agents)])

    def feedback(self, previous, bits, reward, current, training):
        if not training:
            return float("nan")
        if previous is not None:
            s, s_next = self.observations(previous), self.observations(current)
            for m, a in enumerate(self.agents):
                a.remember(s[m], bits[m], reward, s_next[m])
        losses = [a.train_step() for a in self.agents]
        self.frames_trained += 1
        for a in self.agents:
            a.sync_target(self.frames_trained)
        losses = [x for x in losses if x is not None]
        return float(np.mean(losses)) if losses else float("nan")


def make_controller(scheme: str, cfg: SystemConfig, seed: int,
                    training: TrainingConfig | None = None) -> Controller:
    if scheme == "ttosc":
        return TTOSCController(cfg, seed, training)
    kinds = {"cloud": CloudController, "popularity": PopularityController,
             "greedy": GreedyController, "random": RandomController}
    if scheme not in kinds:
        raise ConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    return kinds[scheme](cfg, seed)


# ------------------------------------------------------------------- records

@dataclass
class EpisodeStats:
    phase: str
    episode: int
    epsilon: float
    mean_reward: float
    delay: float          # time-average delay over slots with arrivals
    cloud_delay: float
    min_gain: float
    mean_loss: float

    def row(self):
        return [getattr(self, k) for k in EPISODE_FIELDS]


@dataclass
class Recorder:
    """In-memory metric tables, written out as CSV on request."""

    record_slots: bool = True
    slots: list = field(default_factory=list)
    frames: list = field(default_factory=list)
    episodes: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def write(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        tables = [("frames.csv", FRAME_FIELDS, self.frames),
                  ("episodes.csv", EPISODE_FIELDS, [e.row() for e in self.episodes]),
                  ("timings.csv", TIMING_FIELDS, self.timings)]
        if self.record_slots:
            tables.append(("slots.csv", SLOT_FIELDS, self.slots))
        for name, header, rows in tables:
            write_csv(out / name, header, rows)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------- episode loop

def schedule_slot(mode: str, plan, alloc, costs: FrameCosts, arrivals, cfg, settings):
    """Returns (slot delay, all-cloud slot delay) for one slot."""
    counts = arrivals.sum(axis=0)
    if mode == "convex":
        sol = solve_slot(plan, alloc, arrivals, cfg, settings, costs)
        return sol.objective, sol.cloud_objective
    cloud = policy_objectives(cloud_only_policy(cfg.M, cfg.J), arrivals, costs)
    cloud_total = slot_delay(cloud, counts)
    if mode == "cloud":
        return cloud_total, cloud_total
    policies = greedy_schedule(costs, arrivals)
    return slot_delay(policy_objectives(policies, arrivals, costs), counts), cloud_total


def run_episode(cfg: SystemConfig, ctrl: Controller, phase: str, episode: int, seed: int,
                settings: SolverSettings, recorder: Recorder | None = None) -> EpisodeStats:
    training = phase == TRAIN
    ctrl.begin_episode(phase, episode)
    workload = Workload(cfg, workload_seed(seed, phase, episode))
    K = cfg.K
    scale = 1.0 / K if isinstance(ctrl, TTOSCController) and ctrl.training.reward_per_slot else 1.0
    delays, clouds, rewards, losses = [], [], [], []
    min_gain = np.inf
    previous = None
    for t in range(cfg.T):
        t0 = time.perf_counter()
        bits = ctrl.deploy(t, previous)
        deploy_time = time.perf_counter() - t0
        plan = DeploymentPlan(bits, t)
        alloc = derive_allocation(plan, cfg)
        costs = FrameCosts.build(alloc, cfg)
        arrivals = workload.frame(t)
        gain_sum = 0.0
        sched_time = 0.0
        for k in range(K):
            s0 = time.perf_counter()
            d, c = schedule_slot(ctrl.scheduling, plan, alloc, costs, arrivals[k], cfg, settings)
            sched_time += time.perf_counter() - s0
            gain = 0.0 if np.isnan(d) else c - d
            gain_sum += gain
            min_gain = min(min_gain, gain)
            delays.append(d)
            clouds.append(c)
            if recorder is not None and recorder.record_slots:
                recorder.slots.append([phase, episode, t, t * K + k, int(arrivals[k].sum()),
                                       d, c, gain])
        reward = gain_sum * scale
        t1 = time.perf_counter()
        loss = ctrl.feedback(previous, bits, reward, arrivals, training)
        deploy_time += time.perf_counter() - t1
        rewards.append(reward)
        losses.append(loss)
        previous = arrivals
        if recorder is not None:
            recorder.frames.append([phase, episode, t, reward, loss, ctrl.epsilon,
                                    int(bits.sum())])
            recorder.timings.append([phase, episode, t, deploy_time, sched_time / K])
    finite = [x for x in losses if np.isfinite(x)]
    try:
        delay, cloud = time_average(delays), time_average(clouds)
    except ValueError:
        delay = cloud = float("nan")
    stats = EpisodeStats(phase, episode, ctrl.epsilon, float(np.mean(rewards)), delay, cloud,
                         float(min_gain), float(np.mean(finite)) if finite else float("nan"))
    if recorder is not None:
        recorder.episodes.append(stats)
    return stats


@dataclass
class RunResult:
    scheme: str
    seed: int
    controller: Controller
    recorder: Recorder

    def stats(self, phase: str = TRAIN) -> list[EpisodeStats]:
        return [e for e in self.recorder.episodes if e.phase == phase]

    def rewards(self) -> np.ndarray:
        return np.array([e.mean_reward for e in self.stats(TRAIN)])

    def final_delay(self, tail: int = 100) -> float:
        """Mean evaluation delay, or the mean over the last ``tail``
        training episodes when no evaluation was run."""
        ev = self.stats(EVAL)
        chosen = ev if ev else self.stats(TRAIN)[-tail:]
        return float(np.nanmean([e.delay for e in chosen]))


def run_scheme(cfg: SystemConfig, scheme: str, episodes: int, seed: int = 0, *,
               solver: SolverSettings | None = None, training: TrainingConfig | None = None,
               eval_episodes: int = 0, record_slots: bool = True, output_dir=None,
               controller: Controller | None = None, log_every: int = 0) -> RunResult:
    """Train (or just roll out) ``scheme`` for ``episodes`` episodes, then run
    ``eval_episodes`` greedy episodes on evaluation workloads."""
    if episodes < 0 or eval_episodes < 0:
        raise ConfigError("episode counts must be non-negative")
    settings = solver or SolverSettings()
    ctrl = controller or make_controller(scheme, cfg, seed, training)
    rec = Recorder(record_slots)
    result = RunResult(scheme, seed, ctrl, rec)
    is_rl = isinstance(ctrl, TTOSCController)
    try:
        for e in range(episodes):
            ctrl.epsilon = epsilon_at(e, ctrl.training) if is_rl else 0.0
            st = run_episode(cfg, ctrl, TRAIN, e, seed, settings, rec)
            if log_every and (e + 1) % log_every == 0:
                log.info("%s seed %d episode %d: reward %.4f delay %.4f eps %.3f",
                         scheme, seed, e + 1, st.mean_reward, st.delay, st.epsilon)
        ctrl.epsilon = 0.0
        for e in range(eval_episodes):
            run_episode(cfg, ctrl, EVAL, e, seed, settings, rec)
    except DivergenceError:
        if output_dir is not None:
            write_run(result, cfg, Path(output_dir), failed=True)
        raise
    if output_dir is not None:
        write_run(result, cfg, Path(output_dir))
    return result


def run_ttosc(cfg, episodes, seed=0, **kw) -> RunResult:
    return run_scheme(cfg, "ttosc", episodes, seed, **kw)


def run_baseline(cfg, kind: str, episodes, seed=0, **kw) -> RunResult:
    if kind == "ttosc":
        raise ConfigError("ttosc is not a baseline")
    return run_scheme(cfg, str(getattr(kind, "value", kind)), episodes, seed, **kw)


def write_run(result: RunResult, cfg: SystemConfig, out: Path, failed: bool = False) -> None:
    result.recorder.write(out)
    train, ev = result.stats(TRAIN), result.stats(EVAL)
    summary = {
        "scheme": result.scheme, "seed": result.seed, "M": cfg.M, "J": cfg.J,
        "train_episodes": len(train), "eval_episodes": len(ev),
        "final_delay": result.final_delay() if (train or ev) else None,
        "failed": failed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    if isinstance(result.controller, TTOSCController):
        save_checkpoint(out / "agents.npz", result.controller.agents)


# ------------------------------------------------------------------ analysis

def smooth(series, window: int) -> np.ndarray:
    """Centred moving average; the window shrinks near both ends."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("cannot smooth an empty series")
    if window < 1:
        raise ValueError("window must be >= 1")
    lo = window // 2
    hi = window - lo - 1
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    a = np.maximum(idx - lo, 0)
    b = np.minimum(idx + hi, x.size - 1) + 1
    return (c[b] - c[a]) / (b - a)


def apply_axis(cfg: SystemConfig, axis: str, value) -> SystemConfig:
    """Configuration with one sweep parameter changed."""
    if axis == "cells":
        return cfg.with_servers(int(value))
    if axis == "services":
        return cfg.with_services(int(value))
    if axis == "zipf":
        return cfg.with_workload(zipf_alpha=float(value))
    if axis == "storage":
        return cfg.with_storage(int(value))
    if axis == "compute":
        return cfg.with_compute(float(value))
    if axis == "users":
        # keep the width of the population range, move its centre
        w = cfg.workload
        half = (w.users_high - w.users_low) / 2
        low = max(0, int(round(float(value) - half)))
        return cfg.with_workload(users_low=low, users_high=low + int(round(2 * half)))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


@dataclass(frozen=True)
class ExperimentSpec:
    scheme: str = "ttosc"
    episodes: int = 100
    seeds: tuple = (0,)
    eval_episodes: int = 10
    axis: str | None = None
    values: tuple = ()
    output_dir: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.axis is not None:
            if self.axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {self.axis!r}")
            if not self.values or not all(np.isfinite(float(v)) for v in self.values):
                raise ConfigError("sweep values must be a non-empty list of finite numbers")


SWEEP_FIELDS = ["axis", "value", "scheme", "seed", "delay", "mean_reward"]


def sweep(cfg: SystemConfig, spec: ExperimentSpec, solver=None, training=None,
          log_every: int = 0) -> list[list]:
    """One run per (value, seed); returns and optionally writes ``sweep.csv``."""
    if spec.axis is None:
        raise ConfigError("sweep needs an axis")
    rows = []
    out = Path(spec.output_dir) if spec.output_dir else None
    for value in spec.values:
        c = apply_axis(cfg, spec.axis, value)
        for seed in spec.seeds:
            sub = out / f"{spec.axis}={value}" / f"seed={seed}" if out else None
            res = run_scheme(c, spec.scheme, spec.episodes, seed, solver=solver,
                             training=training, eval_episodes=spec.eval_episodes,
                             record_slots=False, output_dir=sub, log_every=log_every)
            rows.append([spec.axis, value, spec.scheme, seed, res.final_delay(),
                         float(np.mean([e.mean_reward for e in res.recorder.episodes]))])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "sweep.csv", SWEEP_FIELDS, rows)
    return rows


def plotdata(input_dir, output_dir, window: int = 100) -> dict[str, Path]:
    """Collect run and sweep CSVs below ``input_dir`` into figure tables.

    ``convergence.csv`` holds the smoothed training reward of every run,
    ``trends.csv`` the seed-averaged delay per (axis, value, scheme).
    """
    src, out = Path(input_dir), Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    conv = []
    for path in sorted(src.rglob("episodes.csv")):
        rows = [r for r in read_csv(path) if r["phase"] == TRAIN]
        if not rows:
            continue
        run = str(path.parent.relative_to(src))
        r = np.array([float(x["mean_reward"]) for x in rows])
        s = smooth(r, window)
        conv.extend([run, int(x["episode"]), r[i], s[i]] for i, x in enumerate(rows))
    if conv:
        written["convergence"] = out / "convergence.csv"
        write_csv(written["convergence"], ["run", "episode", "reward", "smoothed"], conv)
    groups: dict[tuple, list[float]] = {}
    for path in sorted(src.rglob("sweep.csv")):
        for r in read_csv(path):
            groups.setdefault((r["axis"], float(r["value"]), r["scheme"]), []).append(float(r["delay"]))
    if groups:
        rows = [[a, v, s, float(np.mean(d)), float(np.std(d)), len(d)]
                for (a, v, s), d in sorted(groups.items())]
        written["trends"] = out / "trends.csv"
        write_csv(written["trends"], ["axis", "value", "scheme", "mean_delay", "std_delay", "seeds"],
                  rows)
    return written


# ---------------------------------------------------------- bench and oracles

def bench(cfg: SystemConfig, solver: SolverSettings | None = None,
          training: TrainingConfig | None = None, frames: int = 10, seed: int = 0) -> dict:
    """Wall-clock of one slot solve and of one deployment step (every
    agent selects an action and trains once)."""
    settings = solver or SolverSettings()
    ctrl = TTOSCController(cfg, seed, training)
    rng = np.random.default_rng([seed, 31])
    wl = Workload(cfg, derive_seed(seed, 2, 0))
    obs = ctrl.observations(wl.frame(0))
    for m, a in enumerate(ctrl.agents):
        for _ in range(a.cfg.batch_size):
            a.remember(obs[m], a.random_action(), float(rng.random()), obs[m])
    slot_times, deploy_times = [], []
    for t in range(frames + 1):
        plan = DeploymentPlan(ctrl.random_plan(), t)
        alloc = derive_allocation(plan, cfg)
        arrivals = wl.frame(t)
        for k in range(cfg.K):
            s0 = time.perf_counter()
            solve_slot(plan, alloc, arrivals[k], cfg, settings, FrameCosts.build(alloc, cfg))
            if t:       # frame 0 warms up compiled kernels
                slot_times.append(time.perf_counter() - s0)
        obs = ctrl.observations(arrivals)
        s0 = time.perf_counter()
        for m, a in enumerate(ctrl.agents):
            a.select_action(obs[m], 0.0)
            a.train_step()
        if t:
            deploy_times.append(time.perf_counter() - s0)
    s, d = np.array(slot_times), np.array(deploy_times)
    return {"M": cfg.M, "J": cfg.J, "hidden": ctrl.training.hidden,
            "slot_median_s": float(np.median(s)), "slot_mean_s": float(s.mean()),
            "deploy_median_s": float(np.median(d)), "deploy_mean_s": float(d.mean()),
            "deploy_per_agent_median_s": float(np.median(d)) / cfg.M,
            "slot_samples": int(s.size), "deploy_samples": int(d.size)}


def random_service_context(rng: np.random.Generator, M: int, hosts=None) -> ServiceContext:
    """Random single-service instance with default-like magnitudes."""
    if hosts is None:
        hosts = rng.random(M) < 0.6
    hosts = np.asarray(hosts, dtype=bool)
    compute = np.where(hosts, rng.uniform(2.0, 20.0, M), 0.0)
    rates = rng.uniform(200.0, 1000.0, (M, M))
    np.fill_diagonal(rates, np.inf)
    return ServiceContext(float(rng.uniform(4, 16)), float(rng.uniform(0.1, 1.0)), hosts,
                          compute, rates, np.full(M, 100.0), 10.0)


def oracle_check(n_schedule: int = 50, n_knapsack: int = 200, seed: int = 0,
                 grid_step: float = 0.02, settings: SolverSettings | None = None) -> dict:
    """Solver vs. grid oracle (M=2, one service) and knapsack vs. exhaustive search."""
    settings = settings or SolverSettings()
    rng = np.random.default_rng([seed, 41])
    sched_fail, worst = 0, -np.inf
    for _ in range(n_schedule):
        ctx = random_service_context(rng, 2)
        N = rng.integers(0, 7, 2)
        if N.sum() == 0:
            N[rng.integers(2)] = 1
        sol = solve_service(ctx, N, settings)
        best = brute_force_oracle(ctx, N, grid_step)
        gap = sol.objective - best
        worst = max(worst, gap)
        if gap > 1e-3 or sol.objective > sol.cloud_objective:
            sched_fail += 1
    knap_fail = 0
    for _ in range(n_knapsack):
        J = int(rng.integers(1, 17))
        V = rng.integers(1, 6, J)
        C = int(rng.integers(0, V.sum() + 1))
        O = rng.normal(size=J)
        a = knapsack_select(O, V, C)
        b = exhaustive_select(O, V, C)
        if int(a @ V) > C or q_value(O, a) != q_value(O, b):
            knap_fail += 1
    return {"schedule_instances": n_schedule, "schedule_failures": sched_fail,
            "schedule_worst_gap": float(worst),
            "knapsack_instances": n_knapsack, "knapsack_failures": knap_fail,
            "ok": sched_fail == 0 and knap_fail == 0}

