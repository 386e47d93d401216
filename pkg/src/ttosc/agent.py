"""Per-ES Double-DQN deployment agents.

The value network reads the previous frame's K x J arrival counts through a
GRU stack, maps the last hidden state to J partial values (one per service)
and scores a deployment as the sum of the partial values of the deployed
services. Greedy actions therefore come from a knapsack over the partial
values. Everything is plain numpy with hand-written backpropagation.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError
from .knapsack import FeasibleSampler, knapsack_select_batch

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainingConfig:
    gamma: float = 0.9
    learning_rate: float = 0.01
    batch_size: int = 64
    target_period: int = 20
    epsilon_start: float = 0.5
    epsilon_end: float = 0.01
    epsilon_decay_episodes: int = 500
    hidden: int = 128
    layers: int = 1
    buffer_capacity: int = 2000
    head_activation: str = "identity"
    normalize_observations: bool = True
    observation_scale: float | None = None      # overrides 1 / users_high
    reward_per_slot: bool = False
    state_value: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0 < self.epsilon_end <= 1 or not 0 < self.epsilon_start <= 1:
            raise ConfigError("epsilon values must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigError("buffer must hold at least one batch")
        if self.target_period < 1 or self.hidden < 1 or self.layers < 1:
            raise ConfigError("target_period, hidden and layers must be >= 1")
        if self.head_activation not in ("identity", "tanh"):
            raise ConfigError(f"unknown head activation {self.head_activation!r}")
        if self.observation_scale is not None and not self.observation_scale > 0:
            raise ConfigError("observation_scale must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")


def epsilon_at(episode: int, cfg: TrainingConfig | None = None) -> float:
    """Linearly annealed exploration rate, constant after the decay window."""
    cfg = cfg or TrainingConfig()
    if episode < 0:
        raise ValueError("episode index must be >= 0")
    if cfg.epsilon_decay_episodes <= 0:
        return cfg.epsilon_end
    frac = min(episode, cfg.epsilon_decay_episodes) / cfg.epsilon_decay_episodes
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class QNetwork:
    """GRU stack followed by the two-layer value head.

    Parameters live in ``self.params``; per layer ``l`` the GRU has input
    weights ``gru{l}.W`` (in, 3H), recurrent weights ``gru{l}.U`` (H, 3H) and
    bias ``gru{l}.b`` (3H,), with gate blocks ordered update, reset,
    candidate. The candidate uses ``tanh(W x + U (r * h) + b)`` and the new
    state is ``(1 - z) * h + z * candidate``.

    With ``state_value`` the head has one extra output column, a
    state-dependent offset added to every action's value. It does not change
    the greedy action.
    """

    def __init__(self, J: int, hidden: int = 128, layers: int = 1,
                 activation: str = "identity", rng: np.random.Generator | None = None,
                 dtype="float64", state_value: bool = False):
        self.J, self.H, self.layers, self.activation = J, hidden, layers, activation
        self.state_value = bool(state_value)
        self.n_out = J + self.state_value
        self.dtype = np.dtype(dtype)
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(hidden)
        shapes = {}
        n_in = J
        for layer in range(layers):
            shapes[f"gru{layer}.W"] = (n_in, 3 * hidden)
            shapes[f"gru{layer}.U"] = (hidden, 3 * hidden)
            shapes[f"gru{layer}.b"] = (3 * hidden,)
            n_in = hidden
        shapes["head.W"] = (hidden, self.n_out)
        shapes["head.b"] = (self.n_out,)
        self.params: dict[str, np.ndarray] = {
            k: rng.uniform(-bound, bound, shape).astype(self.dtype) for k, shape in shapes.items()}

    def copy(self) -> "QNetwork":
        return copy.deepcopy(self)

    def load(self, params: dict[str, np.ndarray]) -> None:
        for k, v in params.items():
            if self.params[k].shape != v.shape:
                raise DimensionError(f"parameter {k}: {v.shape} != {self.params[k].shape}")
            self.params[k] = np.array(v, dtype=self.dtype)

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- GRU -----------------------------------------------------------------

    def _gru_layer(self, layer: int, X: np.ndarray):
        W, U, b = (self.params[f"gru{layer}.{n}"] for n in "WUb")
        B, K, _ = X.shape
        H = self.H
        XW = X @ W + b
        U_zr, U_c = np.ascontiguousarray(U[:, : 2 * H]), np.ascontiguousarray(U[:, 2 * H:])
        h = np.zeros((B, H), dtype=self.dtype)
        hs = np.empty((B, K, H), dtype=self.dtype)
        cache = []
        for k in range(K):
            a = XW[:, k]
            hu = h @ U_zr
            z = _sigmoid(a[:, :H] + hu[:, :H])
            r = _sigmoid(a[:, H: 2 * H] + hu[:, H:])
            rh = r * h
            cand = np.tanh(a[:, 2 * H:] + rh @ U_c)
            cache.append((h, z, r, rh, cand))
            h = h + z * (cand - h)
            hs[:, k] = h
        return hs, cache

    def _gru_layer_backward(self, layer: int, X: np.ndarray, cache, dhs: np.ndarray, grads):
        W, U = self.params[f"gru{layer}.W"], self.params[f"gru{layer}.U"]
        H = self.H
        B, K, _ = X.shape
        U_zr_T = np.ascontiguousarray(U[:, : 2 * H].T)
        U_c_T = np.ascontiguousarray(U[:, 2 * H:].T)
        dA = np.empty((B, K, 3 * H), dtype=self.dtype)
        dU = np.zeros_like(U)
        dh = np.zeros((B, H), dtype=self.dtype)
        for k in range(K - 1, -1, -1):
            h_prev, z, r, rh, cand = cache[k]
            dh = dh + dhs[:, k]
            d_cand = dh * z * (1.0 - cand ** 2)
            dz = dh * (cand - h_prev) * z * (1.0 - z)
            d_rh = d_cand @ U_c_T
            dr = d_rh * h_prev * r * (1.0 - r)
            dzr = np.concatenate([dz, dr], axis=1)
            dU[:, : 2 * H] += h_prev.T @ dzr
            dU[:, 2 * H:] += rh.T @ d_cand
            dh = dh * (1.0 - z) + d_rh * r + dzr @ U_zr_T
            dA[:, k, : 2 * H] = dzr
            dA[:, k, 2 * H:] = d_cand
        flat = dA.reshape(B * K, 3 * H)
        grads[f"gru{layer}.W"] = X.reshape(B * K, -1).T @ flat
        grads[f"gru{layer}.U"] = dU
        grads[f"gru{layer}.b"] = flat.sum(axis=0)
        return dA @ W.T

    def gru_forward(self, obs: np.ndarray):
        """Final hidden state for a batch of (K, J) observations plus a cache."""
        obs = np.asarray(obs, dtype=self.dtype)
        if obs.ndim == 2:
            obs = obs[None]
        if obs.ndim != 3 or obs.shape[2] != self.J:
            raise DimensionError(f"observation batch {obs.shape} does not end in J={self.J}")
        inputs, caches = [obs], []
        x = obs
        for layer in range(self.layers):
            x, c = self._gru_layer(layer, x)
            inputs.append(x)
            caches.append(c)
        return x[:, -1], (inputs, caches)

    def gru_backward(self, cache, d_hidden: np.ndarray, grads: dict) -> np.ndarray:
        """Accumulate GRU gradients into ``grads``; returns d(loss)/d(obs)."""
        inputs, caches = cache
        B, K = inputs[0].shape[:2]
        dhs = np.zeros((B, K, self.H), dtype=self.dtype)
        dhs[:, -1] = d_hidden
        for layer in range(self.layers - 1, -1, -1):
            dhs = self._gru_layer_backward(layer, inputs[layer], caches[layer], dhs, grads)
        return dhs

    # -- value head ----------------------------------------------------------

    def head_forward(self, hidden: np.ndarray) -> np.ndarray:
        if hidden.shape[-1] != self.H:
            raise DimensionError("hidden width does not match the head")
        O = hidden @ self.params["head.W"] + self.params["head.b"]
        return np.tanh(O) if self.activation == "tanh" else O

    def partial_values(self, obs: np.ndarray) -> np.ndarray:
        hidden, _ = self.gru_forward(obs)
        return self.head_forward(hidden)[..., : self.J]

    def forward(self, obs: np.ndarray):
        """Head outputs (B, J) or (B, J + 1) with the state value last."""
        hidden, gcache = self.gru_forward(obs)
        O = self.head_forward(hidden)
        return O, (hidden, O, gcache)

    def backward(self, cache, dO: np.ndarray):
        """Gradients of a scalar loss given d(loss)/d(partial values)."""
        hidden, O, gcache = cache
        dO = np.asarray(dO, dtype=self.dtype)
        if self.activation == "tanh":
            dO = dO * (1.0 - O ** 2)
        grads = {"head.W": hidden.T @ dO, "head.b": dO.sum(axis=0)}
        d_hidden = dO @ self.params["head.W"].T
        d_obs = self.gru_backward(gcache, d_hidden, grads)
        return grads, d_obs


def slice_cache(cache, n: int):
    """Restrict a forward cache to its first ``n`` samples."""
    hidden, O, (inputs, caches) = cache
    return (hidden[:n], O[:n],
            ([x[:n] for x in inputs], [[tuple(a[:n] for a in step) for step in layer]
                                       for layer in caches]))


def q_values(O: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Batched action-weighted sum of partial values."""
    return np.einsum("bj,bj->b", O, np.asarray(actions, dtype=float))


def head_weights(net: QNetwork, actions: np.ndarray) -> np.ndarray:
    """Actions padded with a ones column when the head has a state value."""
    actions = np.asarray(actions, dtype=float)
    if not net.state_value:
        return actions
    return np.concatenate([actions, np.ones((len(actions), 1))], axis=1)


def _next_values(online: QNetwork, target: QNetwork, next_states, V, C) -> np.ndarray:
    best = knapsack_select_batch(online.partial_values(next_states), V, C)
    hidden, _ = target.gru_forward(next_states)
    return q_values(target.head_forward(hidden), head_weights(target, best))


class ReplayBuffer:
    """Fixed-capacity ring buffer of (state, action, reward, next state)."""

    def __init__(self, capacity: int, K: int, J: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, K, J))
        self.actions = np.zeros((capacity, J), dtype=np.int8)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, K, J))
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def push(self, state, action, reward, next_state) -> None:
        i = self._next
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator):
        if n > self.size:
            raise ValueError(f"cannot sample {n} transitions from {self.size}")
        idx = rng.choice(self.size, size=n, replace=False)
        return (self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx])


def td_targets(batch, online: QNetwork, target: QNetwork, gamma: float, V, C: int) -> np.ndarray:
    """Double-DQN targets: the online net picks the next action via the
    knapsack, the target net scores it."""
    _, _, rewards, next_states = batch
    if gamma == 0:
        return np.array(rewards, dtype=float)
    return rewards + gamma * _next_values(online, target, next_states, V, C)


def loss_and_grads(net: QNetwork, states, actions, targets):
    O, cache = net.forward(states)
    w = head_weights(net, actions)
    err = targets - q_values(O, w)
    n = len(targets)
    loss = float(np.mean(err ** 2))
    dO = (-2.0 / n) * err[:, None] * w
    grads, _ = net.backward(cache, dO)
    return loss, grads


def sgd_step(net: QNetwork, grads: dict, lr: float) -> None:
    for k, g in grads.items():
        net.params[k] -= lr * g


class DeploymentAgent:
    """One ES's training net, target net, replay buffer and explorer."""

    def __init__(self, J: int, K: int, data_sizes, capacity: int,
                 cfg: TrainingConfig | None = None, seed: int = 0):
        self.cfg = cfg or TrainingConfig()
        self.J, self.K = J, K
        self.V = np.asarray(data_sizes, dtype=np.int64)
        self.C = int(capacity)
        self.rng = np.random.default_rng([seed, 11])
        self.online = QNetwork(J, self.cfg.hidden, self.cfg.layers, self.cfg.head_activation,
                               np.random.default_rng([seed, 12]), self.cfg.dtype,
                               self.cfg.state_value)
        self.target = self.online.copy()
        self.buffer = ReplayBuffer(self.cfg.buffer_capacity, K, J)
        self.sampler = FeasibleSampler(self.V, self.C)
        self.updates = 0

    def random_action(self) -> np.ndarray:
        return self.sampler.sample(self.rng)

    def greedy_action(self, obs: np.ndarray) -> np.ndarray:
        return knapsack_select_batch(self.online.partial_values(obs), self.V, self.C)[0]

    def select_action(self, obs: np.ndarray | None, epsilon: float) -> np.ndarray:
        """Epsilon-greedy; always random when no observation exists yet."""
        if obs is None or self.rng.random() < epsilon:
            return self.random_action()
        return self.greedy_action(obs)

    def remember(self, state, action, reward, next_state) -> None:
        self.buffer.push(state, action, reward, next_state)

    def train_step(self, batch=None) -> float | None:
        """One SGD step on a replay batch; returns the pre-update loss."""
        cfg = self.cfg
        if batch is None:
            if len(self.buffer) < cfg.batch_size:
                return None
            batch = self.buffer.sample(cfg.batch_size, self.rng)
        states, actions, rewards, next_states = batch
        n = len(rewards)
        # one online pass over states and next states, both at the current weights
        O, cache = self.online.forward(np.concatenate([states, next_states]))
        if cfg.gamma == 0:
            y = np.asarray(rewards, dtype=float)
        else:
            best = knapsack_select_batch(O[n:, : self.J], self.V, self.C)
            hidden, _ = self.target.gru_forward(next_states)
            y = rewards + cfg.gamma * q_values(self.target.head_forward(hidden),
                                               head_weights(self.target, best))
        w = head_weights(self.online, actions)
        err = y - q_values(O[:n], w)
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss} after {self.updates} updates")
        dO = (-2.0 / n) * err[:, None] * w
        grads, _ = self.online.backward(slice_cache(cache, n), dO)
        sgd_step(self.online, grads, cfg.learning_rate)
        self.updates += 1
        return loss

    def sync_target(self, frame: int) -> bool:
        if frame % self.cfg.target_period == 0:
            self.target = self.online.copy()
            return True
        return False

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"online/{k}": v for k, v in self.online.params.items()}
        out.update({f"target/{k}": v for k, v in self.target.params.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.online.load({k[7:]: v for k, v in state.items() if k.startswith("online/")})
        self.target.load({k[7:]: v for k, v in state.items() if k.startswith("target/")})


def save_checkpoint(path, agents: list[DeploymentAgent]) -> None:
    arrays = {"version": np.array(CHECKPOINT_VERSION)}
    for m, agent in enumerate(agents):
        arrays.update({f"agent{m}/{k}": v for k, v in agent.state_dict().items()})
    np.savez(path, **arrays)


def load_checkpoint(path, agents: list[DeploymentAgent]) -> None:
    with np.load(path) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {int(data['version'])}")
        for m, agent in enumerate(agents):
            prefix = f"agent{m}/"
            agent.load_state_dict({k[len(prefix):]: data[k] for k in data.files
                                   if k.startswith(prefix)})
