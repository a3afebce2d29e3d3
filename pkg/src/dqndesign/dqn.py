"""Deep Q-learning over capacity-expansion environments.

The trainer runs the classic loop: epsilon-greedy masked action from the
online network, environment step, replay storage, one minibatch gradient
step per environment step once the buffer is warm, and a hard target-network
sync every ``sync_period`` gradient steps.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from ._validation import check_states
from .env import CapacityExpansionEnv, EnvParams, EnvState
from .exceptions import ConfigError, DivergenceError
from .qtable import epsilon_schedule
from .rng import derive_rng, derive_seed

__all__ = [
    "Experience",
    "ReplayBuffer",
    "TrainingConfig",
    "TrainingLog",
    "PolicyArtifact",
    "td_target",
    "encode_states",
    "feasible_mask",
    "train",
    "greedy_decision",
    "DeepQDesigner",
    "CHECKPOINT_FORMAT",
]

CHECKPOINT_FORMAT = "dqndesign-checkpoint"
CHECKPOINT_VERSION = 1


class Experience(NamedTuple):
    state: EnvState
    decision: int
    reward: float
    next_state: EnvState
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions with uniform sampling.

    Transitions are stored column-wise as raw state rows
    ``(t, price, demand, installed)`` so minibatches come out as arrays.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, 4))
        self.next_states = np.zeros((self.capacity, 4))
        self.decisions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.terminals = np.zeros(self.capacity, dtype=bool)
        self.n_pushed = 0

    def __len__(self) -> int:
        return min(self.n_pushed, self.capacity)

    def push(self, exp: Experience) -> "ReplayBuffer":
        j = self.n_pushed % self.capacity
        s, s2 = exp.state, exp.next_state
        self.states[j] = (s.t, s.price, s.demand, s.installed)
        self.next_states[j] = (s2.t, s2.price, s2.demand, s2.installed)
        self.decisions[j] = exp.decision
        self.rewards[j] = exp.reward
        self.terminals[j] = exp.terminal
        self.n_pushed += 1
        return self

    def _slot(self, k: int) -> int:
        """Storage slot of the k-th oldest live entry."""
        start = self.n_pushed - len(self)
        return (start + k) % self.capacity

    def _experience(self, j: int) -> Experience:
        def state(row):
            return EnvState(int(row[0]), float(row[1]), float(row[2]), int(row[3]))
        return Experience(state(self.states[j]), int(self.decisions[j]), float(self.rewards[j]),
                          state(self.next_states[j]), bool(self.terminals[j]))

    def contents(self) -> list[Experience]:
        """Live entries, oldest first."""
        return [self._experience(self._slot(k)) for k in range(len(self))]

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n and len(self) < n:
            raise BufferError(f"buffer holds {len(self)} < {n} transitions")
        return rng.integers(0, len(self), size=n)

    def sample_minibatch(self, n: int, rng: np.random.Generator) -> list[Experience]:
        """``n`` uniform draws with replacement over current contents."""
        return [self._experience(j) for j in self.sample_indices(n, rng)]

    def sample_arrays(self, n: int, rng: np.random.Generator):
        idx = self.sample_indices(n, rng)
        return (self.states[idx], self.decisions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])


@dataclass(frozen=True)
class TrainingConfig:
    episodes: int = 150_000
    gamma: float = 1.0
    learning_rate: float = 1e-3
    eps_start: float = 1.0
    eps_end: float = 0.001
    eps_decay: float = 0.99995
    batch_size: int = 64
    buffer_capacity: int = 100_000
    sync_period: int = 1_000
    min_fill: int = 1_000
    seed: int = 0
    hidden_layers: tuple = (64, 64)
    activation: str = "relu"
    optimizer: str = "adam"
    # None: one unit of output sold at the initial price
    reward_scale: float | None = None
    # learning rate decays linearly to learning_rate * lr_final_fraction
    lr_final_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        self.validate()

    def validate(self) -> None:
        if self.episodes < 0:
            raise ConfigError("must be >= 0", key="episodes")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("must lie in [0, 1]", key="gamma")
        if not self.learning_rate > 0:
            raise ConfigError("must be > 0", key="learning_rate")
        if not 0 < self.eps_end <= self.eps_start <= 1:
            raise ConfigError("need 0 < eps_end <= eps_start <= 1", key="eps_end")
        if not 0 < self.eps_decay <= 1:
            raise ConfigError("must lie in (0, 1]", key="eps_decay")
        for key in ("batch_size", "buffer_capacity", "sync_period"):
            if getattr(self, key) < 1:
                raise ConfigError("must be >= 1", key=key)
        if self.batch_size > self.buffer_capacity:
            raise ConfigError("batch_size exceeds buffer_capacity", key="batch_size")
        if self.min_fill < 0:
            raise ConfigError("must be >= 0", key="min_fill")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}", key="activation")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", key="optimizer")
        if self.reward_scale is not None and not self.reward_scale > 0:
            raise ConfigError("must be > 0", key="reward_scale")
        if not 0 < self.lr_final_fraction <= 1:
            raise ConfigError("must lie in (0, 1]", key="lr_final_fraction")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        return d

    @classmethod
    def from_dict(cls, data) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def config_digest(params: EnvParams, config: TrainingConfig | None = None) -> str:
    payload = {"env": params.to_dict()}
    if config is not None:
        payload["training"] = config.to_dict()
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(blob.encode()).hexdigest()


def encode_states(X, params: EnvParams) -> np.ndarray:
    """Network inputs ``[t/T, p/p1, d/d1, installed/K]``; unbounded demand encodes as 0."""
    X = np.asarray(X, dtype=float)
    out = np.empty_like(X)
    out[:, 0] = X[:, 0] / params.horizon
    out[:, 1] = X[:, 1] / params.initial_price
    out[:, 2] = X[:, 2] / params.initial_demand if params.demand_enabled else 0.0
    out[:, 3] = X[:, 3] / params.max_capacity
    return out


def feasible_mask(installed, n_decisions: int) -> np.ndarray:
    """Boolean ``(n, n_decisions)`` mask of decisions within the remaining budget."""
    installed = np.asarray(installed).reshape(-1, 1)
    return np.arange(n_decisions)[None, :] <= (n_decisions - 1 - installed)


def _masked_max(q, mask):
    return np.where(mask, q, -np.inf).max(axis=1)


def _masked_argmax(q, mask):
    # argmax returns the first maximum: smallest decision wins ties
    return np.where(mask, q, -np.inf).argmax(axis=1)


def td_target(exp: Experience, target_net: nn.QNetwork, gamma: float, feasible_next,
              params: EnvParams | None = None, reward_scale: float = 1.0) -> float:
    """``g`` for terminal transitions, else ``g + gamma * max_{feasible} Q_target(s')``.

    ``feasible_next`` lists the decision indices allowed in the next state.
    Without ``params`` the next state is fed to the network as its raw row.
    """
    g = exp.reward / reward_scale
    if exp.terminal or gamma == 0.0:
        return g
    row = np.array([exp.next_state.as_row()])
    x = encode_states(row, params) if params is not None else row
    q = target_net.forward(x)[0]
    return g + gamma * max(q[j] for j in feasible_next)


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    transitions: int = 0
    budget_violations: int = 0
    gradient_steps: int = 0

    COLUMNS = ("episode", "epsilon", "return", "moving_avg_100", "loss_mean", "wall_ms")

    def returns(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def moving_average(self) -> np.ndarray:
        return np.array([r[3] for r in self.rows])

    def to_csv(self, digest: str = "") -> str:
        buf = io.StringIO()
        if digest:
            buf.write(f"# config_digest={digest}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for ep, eps, ret, avg, loss, wall in self.rows:
            w.writerow([ep, repr(eps), repr(ret), repr(avg),
                        "" if loss is None else repr(loss),
                        "" if wall is None else f"{wall:.1f}"])
        return buf.getvalue()


@dataclass
class PolicyArtifact:
    """A trained Q-network bundled with everything needed to query it."""

    network: nn.QNetwork
    params: EnvParams
    config: TrainingConfig
    reward_scale: float
    metrics: dict = field(default_factory=dict)

    @property
    def config_digest(self) -> str:
        return config_digest(self.params, self.config)

    @property
    def normalization(self) -> dict:
        p = self.params
        return {"horizon": p.horizon, "price": p.initial_price,
                "demand": p.initial_demand if p.demand_enabled else None,
                "installed": p.max_capacity}

    def q_values(self, X) -> np.ndarray:
        """Q-values in currency units with infeasible decisions set to ``-inf``."""
        X = check_states(X, self.params)
        q = self.network.forward(encode_states(X, self.params)) * self.reward_scale
        return np.where(feasible_mask(X[:, 3], self.params.n_decisions), q, -np.inf)

    def predict(self, X) -> np.ndarray:
        """Greedy decisions (smallest index among ties) for a batch of state rows."""
        return self.q_values(X).argmax(axis=1)

    def decide_batch(self, t, price, demand, installed, rng=None) -> np.ndarray:
        X = np.column_stack([np.broadcast_to(t, np.shape(price)), price, demand, installed])
        return self.predict(X)

    def __call__(self, state: EnvState) -> int:
        return greedy_decision(self, state)

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "network": self.network.to_dict(),
            "normalization": self.normalization,
            "reward_scale": self.reward_scale,
            "env_params": self.params.to_dict(),
            "training_config": self.config.to_dict(),
            "config_digest": self.config_digest,
            "metrics": self.metrics,
        }

    def dumps(self) -> str:
        # json writes floats with repr, which round-trips exactly
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def from_dict(cls, data) -> "PolicyArtifact":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a dqndesign checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')}")
        return cls(nn.QNetwork.from_dict(data["network"]), EnvParams(**data["env_params"]),
                   TrainingConfig.from_dict(data["training_config"]),
                   float(data["reward_scale"]), dict(data.get("metrics", {})))

    @classmethod
    def load(cls, path) -> "PolicyArtifact":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt checkpoint {path}: {exc}") from exc
        try:
            return cls.from_dict(data)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"corrupt checkpoint {path}: missing {exc}") from exc


def greedy_decision(artifact: PolicyArtifact, state: EnvState) -> int:
    """Best feasible decision for one state; ties go to the smallest decision."""
    return int(artifact.predict(np.array([state.as_row()]))[0])


def default_reward_scale(params: EnvParams) -> float:
    return params.unit_output * params.initial_price * params.capacity_per_unit or 1.0


def train(env: CapacityExpansionEnv | EnvParams, config: TrainingConfig, *,
          record_wall_time: bool = False, checkpoint_dir=None, callback=None):
    """Run deep Q-learning and return ``(PolicyArtifact, TrainingLog)``.

    Random streams for network initialisation, the simulator and the agent
    (exploration plus minibatch draws) all derive from ``config.seed``.
    """
    if isinstance(env, EnvParams):
        env = CapacityExpansionEnv(env)
    params = env.params
    config.validate()
    n_dec = params.n_decisions
    K = params.max_capacity
    scale = config.reward_scale or default_reward_scale(params)

    online = nn.QNetwork([4, *config.hidden_layers, n_dec], config.activation,
                         seed=derive_seed(config.seed, "init"))
    target = online.copy()
    opt = nn.make_optimizer(config.optimizer, config.learning_rate)
    buffer = ReplayBuffer(config.buffer_capacity)
    agent_rng = derive_rng(config.seed, "agent")
    env.reset(seed=derive_seed(config.seed, "env"))
    warm = max(config.min_fill, config.batch_size)
    gamma = config.gamma

    log = TrainingLog()
    recent = deque(maxlen=100)
    t0 = time.perf_counter()
    total_steps = config.episodes * params.horizon

    def abort(msg):
        path = None
        if checkpoint_dir is not None:
            art = PolicyArtifact(online, params, config, scale, {"aborted": msg})
            path = art.save(Path(checkpoint_dir) / "diverged_checkpoint.json")
        raise DivergenceError(msg, path)

    for episode in range(1, config.episodes + 1):
        eps = epsilon_schedule(episode, config.eps_start, config.eps_end, config.eps_decay)
        state = env.reset()
        ret = 0.0
        losses = []
        while True:
            n_feasible = K - state.installed + 1
            if agent_rng.random() < eps:
                decision = int(agent_rng.integers(n_feasible))
            else:
                x = encode_states(np.array([state.as_row()]), params)
                q = online.forward(x)[0, :n_feasible]
                best = np.flatnonzero(q == q.max())
                decision = int(best[0] if best.size == 1 else agent_rng.choice(best))
            out = env.step(state, decision)
            buffer.push(Experience(state, decision, out.reward, out.next_state, out.terminal))
            log.transitions += 1
            if out.next_state.installed > K:
                log.budget_violations += 1
            ret += out.reward

            if len(buffer) >= warm:
                S, A, R, S2, D = buffer.sample_arrays(config.batch_size, agent_rng)
                y = R / scale
                if gamma > 0:
                    q_next = target.forward(encode_states(S2, params))
                    boot = _masked_max(q_next, feasible_mask(S2[:, 3], n_dec))
                    y = y + gamma * np.where(D, 0.0, boot)
                grads = online.batch_gradients(encode_states(S, params), A, y)
                if not math.isfinite(grads.loss) or grads.loss > 1e12:
                    abort(f"loss {grads.loss} at episode {episode}")
                if config.lr_final_fraction < 1.0:
                    frac = min(1.0, log.transitions / total_steps)
                    opt.learning_rate = config.learning_rate * (
                        1.0 - (1.0 - config.lr_final_fraction) * frac)
                opt.step(online, grads)
                losses.append(grads.loss)
                log.gradient_steps += 1
                if log.gradient_steps % config.sync_period == 0:
                    nn.sync(target, online)
            state = out.next_state
            if out.terminal:
                break
        recent.append(ret)
        wall = (time.perf_counter() - t0) * 1e3 if record_wall_time else None
        log.rows.append((episode, eps, ret, float(np.mean(recent)),
                         float(np.mean(losses)) if losses else None, wall))
        if callback is not None:
            callback(episode, log)

    if not online.all_finite():
        abort("non-finite parameters after training")
    tail = log.returns()[-1000:]
    metrics = {
        "episodes": config.episodes,
        "transitions": log.transitions,
        "gradient_steps": log.gradient_steps,
        "final_epsilon": log.rows[-1][1] if log.rows else None,
        "mean_return_last_1000": float(tail.mean()) if tail.size else None,
    }
    return PolicyArtifact(online, params, config, scale, metrics), log


class DeepQDesigner(BaseEstimator):
    """Estimator front end: ``fit(env_params)`` trains, ``predict(X)`` decides.

    ``X`` rows are ``(t, price, demand, installed)``; use ``inf`` demand for
    the price-only variant.
    """

    def __init__(self, episodes=150_000, gamma=1.0, learning_rate=1e-3, eps_start=1.0,
                 eps_end=0.001, eps_decay=0.99995, batch_size=64, buffer_capacity=100_000,
                 sync_period=1_000, min_fill=1_000, hidden_layers=(64, 64), activation="relu",
                 optimizer="adam", reward_scale=None, lr_final_fraction=0.1, random_state=0):
        self.episodes = episodes
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_decay = eps_decay
        self.batch_size = batch_size
        self.buffer_capacity = buffer_capacity
        self.sync_period = sync_period
        self.min_fill = min_fill
        self.hidden_layers = hidden_layers
        self.activation = activation
        self.optimizer = optimizer
        self.reward_scale = reward_scale
        self.lr_final_fraction = lr_final_fraction
        self.random_state = random_state

    def training_config(self) -> TrainingConfig:
        kw = self.get_params()
        kw["seed"] = kw.pop("random_state")
        return TrainingConfig(**kw)

    def fit(self, env, y=None):
        self.artifact_, self.log_ = train(env, self.training_config())
        self.params_ = self.artifact_.params
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "artifact_")
        return self.artifact_.q_values(X)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "artifact_")
        return self.artifact_.predict(X)
