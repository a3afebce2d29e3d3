"""Finite-horizon capacity-expansion environments.

An environment is a seeded state machine over :class:`EnvState`. Decisions
are plain integers (units of capacity to add at the current stage). Rewards
returned by :meth:`CapacityExpansionEnv.step` are already discounted to
stage-1 currency, so an episode return is the realised discounted profit.

Prices (and, in the demand variant, demand) follow multiplicative lognormal
steps ``x_{t+1} = x_t * exp(N(drift, vol))``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .exceptions import ConfigError, InfeasibleDecisionError

__all__ = [
    "EnvParams",
    "EnvState",
    "StepOutcome",
    "CapacityExpansionEnv",
    "sample_log_ratio",
    "stage_reward",
    "feasible_decisions",
]


@dataclass(frozen=True)
class EnvParams:
    """Parameters of a capacity-expansion problem.

    ``demand_enabled=False`` gives the price-only variant, in which demand is
    unbounded and every installed unit sells ``capacity_per_unit`` units of
    output at the current price.
    """

    horizon: int = 2
    unit_output: float = 2920.0
    op_cost: float = 300.0
    inv_cost: float = 20.0
    interest: float = 0.05
    price_drift: float = 0.05
    price_vol: float = 0.1
    initial_price: float = 0.1
    max_capacity: int = 1
    demand_enabled: bool = False
    demand_drift: float = 0.2
    demand_vol: float = 0.1
    initial_demand: float = 1.0
    capacity_per_unit: float = 1.0
    # 0 samples fresh log-ratios every step; >0 draws from a fixed pool per stage
    pool_size: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.horizon) != self.horizon or self.horizon < 2:
            raise ConfigError("horizon must be an integer >= 2", key="T")
        if int(self.max_capacity) != self.max_capacity or self.max_capacity < 1:
            raise ConfigError("max_capacity must be an integer >= 1", key="K")
        if not self.price_vol > 0:
            raise ConfigError("price_vol must be > 0", key="sigma1")
        if not self.initial_price > 0:
            raise ConfigError("initial_price must be > 0", key="p1")
        for key, value in (("c_om", self.op_cost), ("c_inv", self.inv_cost),
                           ("u", self.unit_output), ("i", self.interest)):
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{key} must be finite and >= 0", key=key)
        if self.pool_size < 0:
            raise ConfigError("pool_size must be >= 0", key="pool_size")
        if self.demand_enabled:
            if not self.demand_vol > 0:
                raise ConfigError("demand_vol must be > 0", key="sigma2")
            if not self.initial_demand > 0:
                raise ConfigError("initial_demand must be > 0", key="d1")
            if not self.capacity_per_unit > 0:
                raise ConfigError("capacity_per_unit must be > 0", key="c_p")

    @property
    def n_decisions(self) -> int:
        return self.max_capacity + 1

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "EnvParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class EnvState:
    """Markov state: stage ``t`` (1-based), price, demand, installed units.

    ``demand`` is ``math.inf`` in the price-only variant. ``t == horizon + 1``
    marks the post-terminal state.
    """

    t: int
    price: float
    demand: float
    installed: int

    def as_row(self) -> list[float]:
        return [float(self.t), self.price, self.demand, float(self.installed)]


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    next_state: EnvState
    terminal: bool


def feasible_decisions(state: EnvState, params: EnvParams) -> range:
    """Decisions ``0 .. K - installed`` satisfying the capacity budget."""
    return range(params.max_capacity - state.installed + 1)


def sample_log_ratio(drift: float, vol: float, rng: np.random.Generator) -> float:
    """One Normal(drift, vol) draw, the log of a price or demand ratio."""
    if not vol > 0:
        raise ValueError("vol must be > 0")
    return drift + vol * float(rng.standard_normal())


def stage_reward(params: EnvParams, t, price, demand, installed, add):
    """Discounted stage profit; broadcasts over numpy arrays.

    ``[u * p * served - c_om * n - c_inv * add] / (1 + i)**(t - 1)`` where
    ``n = installed + add`` and ``served = min(demand, c_p * n)``. With
    unbounded demand ``served`` is ``c_p * n``.
    """
    n = np.asarray(installed) + np.asarray(add)
    served = np.minimum(demand, params.capacity_per_unit * n)
    profit = (params.unit_output * price * served
              - params.op_cost * n
              - params.inv_cost * np.asarray(add))
    out = profit / (1.0 + params.interest) ** (np.asarray(t) - 1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class CapacityExpansionEnv:
    """Seeded simulator for the price-only and price+demand problems.

    The environment holds only the random stream; states are values passed in
    and returned, so several trajectories can share one instance.
    """

    params: EnvParams
    seed: int | None = None
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.params.validate()
        self.rng = np.random.Generator(np.random.PCG64(self.seed))
        self._pool = None

    def reset(self, seed: int | None = None) -> EnvState:
        if seed is not None:
            self.seed = seed
            self.rng = np.random.Generator(np.random.PCG64(seed))
            self._pool = None
        p = self.params
        if p.pool_size and self._pool is None:
            self._pool = self._draw_pool()
        demand = p.initial_demand if p.demand_enabled else math.inf
        return EnvState(1, p.initial_price, demand, 0)

    def feasible_decisions(self, state: EnvState) -> range:
        return feasible_decisions(state, self.params)

    def _draw_pool(self) -> np.ndarray:
        p = self.params
        shape = (p.horizon - 1, p.pool_size)
        prices = p.price_drift + p.price_vol * self.rng.standard_normal(shape)
        if p.demand_enabled:
            demands = p.demand_drift + p.demand_vol * self.rng.standard_normal(shape)
        else:
            demands = np.zeros(shape)
        return np.stack([prices, demands], axis=-1)

    def _log_ratios(self, t: int) -> tuple[float, float]:
        p = self.params
        if p.pool_size:
            if self._pool is None:
                self._pool = self._draw_pool()
            j = int(self.rng.integers(p.pool_size))
            # last stage has no successor draw in the pool; reuse stage T-1
            row = self._pool[min(t, p.horizon - 1) - 1, j]
            return float(row[0]), float(row[1])
        lp = sample_log_ratio(p.price_drift, p.price_vol, self.rng)
        ld = sample_log_ratio(p.demand_drift, p.demand_vol, self.rng) if p.demand_enabled else 0.0
        return lp, ld

    def step(self, state: EnvState, decision: int) -> StepOutcome:
        p = self.params
        if not 1 <= state.t <= p.horizon:
            raise ValueError(f"stage {state.t} is outside 1..{p.horizon}")
        decision = int(decision)
        if not 0 <= decision <= p.max_capacity - state.installed:
            raise InfeasibleDecisionError(
                f"decision {decision} infeasible with {state.installed} of "
                f"{p.max_capacity} units installed")
        reward = stage_reward(p, state.t, state.price, state.demand,
                              state.installed, decision)
        lp, ld = self._log_ratios(state.t)
        demand = state.demand * math.exp(ld) if p.demand_enabled else state.demand
        nxt = EnvState(state.t + 1, state.price * math.exp(lp), demand,
                       state.installed + decision)
        return StepOutcome(reward, nxt, state.t == p.horizon)
