"""Tabular Q-learning over a discretised state space.

The learner works with any environment exposing ``reset(seed=None)``,
``feasible_decisions(state)`` and ``step(state, decision)`` returning an
object with ``reward``, ``next_state`` and ``terminal``. A
:class:`Discretizer` turns continuous capacity-expansion states into table
keys; toy environments with hashable states can skip it.
"""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_states
from .env import CapacityExpansionEnv, EnvParams, EnvState
from .rng import derive_rng, derive_seed

__all__ = [
    "QTable",
    "Discretizer",
    "q_update",
    "epsilon_greedy",
    "epsilon_schedule",
    "train_tabular",
    "greedy_policy",
    "TabularQLearner",
]


@dataclass
class QTable:
    values: dict = field(default_factory=lambda: defaultdict(float))
    visit_counts: dict = field(default_factory=lambda: defaultdict(int))

    def q(self, key, decision) -> float:
        return self.values.get((key, decision), 0.0)

    def row(self, key, feasible) -> dict:
        return {x: self.values.get((key, x), 0.0) for x in feasible}

    def max_q(self, key, feasible) -> float:
        return max(self.values.get((key, x), 0.0) for x in feasible)

    def __len__(self):
        return len(self.values)

    def to_csv(self, discretizer: "Discretizer", digest: str = "") -> str:
        """Rows ``(t, price_bin_low, demand_bin_low, installed, decision, q_value, visits)``."""
        buf = io.StringIO()
        if digest:
            buf.write(f"# config_digest={digest}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "price_bin_low", "demand_bin_low", "installed",
                    "decision", "q_value", "visits"])
        for (key, x) in sorted(self.values):
            t, pb, db, installed = key
            w.writerow([t, repr(discretizer.price_low(pb)), repr(discretizer.demand_low(db)),
                        installed, x, repr(self.values[(key, x)]),
                        self.visit_counts.get((key, x), 0)])
        return buf.getvalue()


class Discretizer:
    """Maps states to ``(t, price_bin, demand_bin, installed)`` keys.

    Bins are half-open ``[edge_k, edge_{k+1})``; values below the first edge
    fall in bin 0 and values past the last edge in the final bin, so every
    positive real has exactly one bin. ``demand_edges=None`` means demand is
    unbounded and always keys to bin ``-1``.
    """

    def __init__(self, price_edges, demand_edges=None):
        self.price_edges = self._check(price_edges)
        self.demand_edges = None if demand_edges is None else self._check(demand_edges)

    @staticmethod
    def _check(edges):
        edges = np.asarray(edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or not np.all(np.diff(edges) > 0):
            raise ValueError("bin edges must be a strictly increasing sequence of length >= 2")
        return edges

    @classmethod
    def default(cls, params: EnvParams, n_bins: int = 200) -> "Discretizer":
        """Uniform bins from 0 to the 4-sigma growth envelope over the horizon."""
        top = params.initial_price * math.exp((params.price_drift + 4 * params.price_vol) * params.horizon)
        demand = None
        if params.demand_enabled:
            dtop = params.initial_demand * math.exp(
                (params.demand_drift + 4 * params.demand_vol) * params.horizon)
            demand = np.linspace(0.0, dtop, n_bins + 1)
        return cls(np.linspace(0.0, top, n_bins + 1), demand)

    @staticmethod
    def _bin(edges, value) -> int:
        k = int(np.searchsorted(edges, value, side="right")) - 1
        return min(max(k, 0), edges.size - 2)

    def price_bin(self, price) -> int:
        return self._bin(self.price_edges, price)

    def demand_bin(self, demand) -> int:
        if self.demand_edges is None or math.isinf(demand):
            return -1
        return self._bin(self.demand_edges, demand)

    def price_low(self, k) -> float:
        return float(self.price_edges[k])

    def demand_low(self, k) -> float:
        return math.inf if k < 0 else float(self.demand_edges[k])

    def __call__(self, state: EnvState):
        return (state.t, self.price_bin(state.price), self.demand_bin(state.demand), state.installed)


def q_update(table: QTable, s, x, g, s_next, feasible_next, alpha, gamma, terminal=False) -> QTable:
    """One temporal-difference update of ``Q(s, x)``; terminal successors bootstrap 0."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    feasible_next = list(feasible_next)
    boot = 0.0 if terminal or not feasible_next else table.max_q(s_next, feasible_next)
    old = table.values.get((s, x), 0.0)
    table.values[(s, x)] = old + alpha * (g + gamma * boot - old)
    table.visit_counts[(s, x)] += 1
    return table


def epsilon_greedy(qvalues: dict, epsilon: float, rng: np.random.Generator):
    """Uniform feasible decision with probability ``epsilon``, else a greedy one.

    Greedy ties are broken uniformly at random.
    """
    if not qvalues:
        raise RuntimeError("empty feasible set; decision 0 should always be feasible")
    decisions = list(qvalues)
    if rng.random() < epsilon:
        return decisions[int(rng.integers(len(decisions)))]
    best = max(qvalues.values())
    ties = [x for x in decisions if qvalues[x] == best]
    return ties[0] if len(ties) == 1 else ties[int(rng.integers(len(ties)))]


def epsilon_schedule(episode: int, eps_start: float, eps_end: float, eps_decay: float) -> float:
    """``max(eps_end, eps_start * eps_decay**(episode - 1))`` for 1-based episodes."""
    return max(eps_end, eps_start * eps_decay ** (episode - 1))


def greedy_policy(table: QTable, state, feasible):
    """Argmax over ``feasible``; ties go to the smallest decision."""
    feasible = sorted(feasible)
    best = feasible[0]
    best_q = table.q(state, best)
    for x in feasible[1:]:
        q = table.q(state, x)
        if q > best_q:
            best, best_q = x, q
    return best


def train_tabular(env, config, discretizer=None):
    """Tabular Q-learning; returns ``(QTable, per-episode returns)``.

    Uses ``config.learning_rate`` as the step size alpha and the same
    epsilon schedule, discount and seed fields as the deep learner.
    """
    alpha, gamma = config.learning_rate, config.gamma
    if not 0 < alpha <= 1:
        raise ValueError("tabular learning_rate must lie in (0, 1]")
    key = discretizer if discretizer is not None else (lambda s: s)
    rng = derive_rng(config.seed, "agent")
    env.reset(seed=derive_seed(config.seed, "env"))
    table = QTable()
    returns = []
    for episode in range(1, config.episodes + 1):
        eps = epsilon_schedule(episode, config.eps_start, config.eps_end, config.eps_decay)
        state = env.reset()
        total = 0.0
        while True:
            s = key(state)
            x = epsilon_greedy(table.row(s, env.feasible_decisions(state)), eps, rng)
            out = env.step(state, x)
            total += out.reward
            nxt = out.next_state
            feasible_next = () if out.terminal else env.feasible_decisions(nxt)
            q_update(table, s, x, out.reward, key(nxt), feasible_next, alpha, gamma, out.terminal)
            state = nxt
            if out.terminal:
                break
        returns.append(total)
    return table, returns


class TabularQLearner(BaseEstimator):
    """Estimator wrapper around :func:`train_tabular` for capacity-expansion problems."""

    def __init__(self, episodes=50_000, learning_rate=0.1, gamma=1.0, eps_start=1.0,
                 eps_end=0.001, eps_decay=0.9999, n_bins=200, random_state=0):
        self.episodes = episodes
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_decay = eps_decay
        self.n_bins = n_bins
        self.random_state = random_state

    def fit(self, env, y=None):
        from .dqn import TrainingConfig

        if isinstance(env, EnvParams):
            env = CapacityExpansionEnv(env)
        self.params_ = env.params
        self.discretizer_ = Discretizer.default(env.params, self.n_bins)
        config = TrainingConfig(episodes=self.episodes, learning_rate=self.learning_rate,
                                gamma=self.gamma, eps_start=self.eps_start, eps_end=self.eps_end,
                                eps_decay=self.eps_decay, seed=self.random_state)
        self.table_, self.returns_ = train_tabular(env, config, self.discretizer_)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "table_")
        X = check_states(X, self.params_)
        K = self.params_.max_capacity
        out = np.empty(len(X), dtype=np.int64)
        for j, (t, p, d, k) in enumerate(X):
            s = self.discretizer_(EnvState(int(t), p, d, int(k)))
            out[j] = greedy_policy(self.table_, s, range(K - int(k) + 1))
        return out
