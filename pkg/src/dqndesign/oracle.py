"""Reference solutions used to check learned policies.

* closed-form break-even price for the two-stage price-only problem;
* Monte Carlo test of "invest at stage 2 versus wait" for the three-stage
  price-only problem, with a lognormal closed form as cross-check;
* exact backward induction on a discretised price (and demand) lattice;
* Monte Carlo policy evaluation and decision-surface extraction.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int, check_states
from .env import EnvParams, EnvState, stage_reward
from .exceptions import ConfigError, InfeasibleDecisionError
from .rng import derive_rng

__all__ = [
    "two_stage_threshold",
    "stage2_advantage",
    "stage2_advantage_closed_form",
    "stage2_condition_mc",
    "stage2_boundary_mc",
    "LatticeSpec",
    "build_lattice",
    "DPSolution",
    "backward_induction",
    "BackwardInductionSolver",
    "EvalReport",
    "evaluate_policy",
    "NeverInvest",
    "InvestAtFirstStage",
    "RandomFeasible",
    "as_batch_policy",
    "PolicyMap",
    "extract_policy_map",
    "stage_grid",
    "threshold_from_advantage",
    "learned_threshold",
    "frontier_disagreements",
    "ComparisonReport",
    "compare_to_dp",
]


def _require_price_only(params: EnvParams, horizon: int | None = None):
    if params.demand_enabled:
        raise ConfigError("requires the price-only variant", key="demand")
    if horizon is not None and params.horizon != horizon:
        raise ConfigError(f"requires horizon {horizon}, got {params.horizon}", key="T")


def two_stage_threshold(params: EnvParams) -> float:
    """Break-even stage-2 price ``(c_om + c_inv) / u`` for adding the unit."""
    if params.unit_output == 0:
        raise ValueError("unit_output is zero; every price breaks even or none does")
    return (params.op_cost + params.inv_cost) / (params.unit_output * params.capacity_per_unit)


# three-stage price-only: invest at stage 2 or keep the option for stage 3

def stage2_advantage(params: EnvParams, p2, z) -> np.ndarray:
    """Invest-now minus wait value at stage 2 from standard-normal draws ``z``.

    Both sides are in stage-2 currency: investing earns
    ``u p2 - c_om - c_inv + (u E[p3|p2] - c_om)/(1+i)``; waiting earns
    ``E[max(u p3 - c_om - c_inv, 0) | p2]/(1+i)``. The expectations are
    sample means over ``p3 = p2 exp(mu + sigma z)``.
    """
    u, com, cinv = params.unit_output * params.capacity_per_unit, params.op_cost, params.inv_cost
    disc = 1.0 + params.interest
    ratio = np.exp(params.price_drift + params.price_vol * np.asarray(z, dtype=float))
    p2_arr = np.atleast_1d(np.asarray(p2, dtype=float))
    out = np.empty_like(p2_arr)
    for j, q in enumerate(p2_arr):
        p3 = q * ratio
        invest = u * q - com - cinv + (u * p3.mean() - com) / disc
        # P(p3 > k) E[u p3 - com - cinv | p3 > k] == E[(u p3 - com - cinv)^+]
        wait = np.maximum(u * p3 - com - cinv, 0.0).mean() / disc
        out[j] = invest - wait
    return out.reshape(np.shape(p2)) if np.ndim(p2) else float(out[0])


def stage2_advantage_closed_form(params: EnvParams, p2) -> np.ndarray:
    """Exact lognormal version of :func:`stage2_advantage`.

    Uses ``E[X 1{X > k}] = e^{m + s^2/2} Phi((m + s^2 - ln k)/s)`` for
    ``ln X ~ N(m, s^2)``.
    """
    u, com, cinv = params.unit_output * params.capacity_per_unit, params.op_cost, params.inv_cost
    disc = 1.0 + params.interest
    mu, s = params.price_drift, params.price_vol
    p2 = np.asarray(p2, dtype=float)
    m = np.log(p2) + mu
    k = (com + cinv) / u
    e_p3 = np.exp(m + s * s / 2)
    tail_mean = e_p3 * ndtr((m + s * s - np.log(k)) / s)
    tail_prob = ndtr((m - np.log(k)) / s)
    invest = u * p2 - com - cinv + (u * e_p3 - com) / disc
    wait = (u * tail_mean - (com + cinv) * tail_prob) / disc
    return invest - wait


def stage2_condition_mc(params: EnvParams, p2: float, n: int, rng: np.random.Generator) -> bool:
    """True when adding capacity at stage 2 beats waiting, by ``n``-sample Monte Carlo."""
    _require_price_only(params, 3)
    if n < 1000:
        raise ValueError("n < 1000 gives a meaningless estimate")
    return bool(stage2_advantage(params, p2, rng.standard_normal(n)) > 0)


def stage2_boundary_mc(params: EnvParams, n: int, rng: np.random.Generator,
                       lo: float | None = None, hi: float | None = None, tol: float = 1e-7) -> float:
    """Stage-2 price at which investing starts to dominate waiting.

    One set of ``n`` draws is shared by every bisection probe, which keeps
    the estimated advantage monotone in ``p2``.
    """
    _require_price_only(params, 3)
    if n < 1000:
        raise ValueError("n < 1000 gives a meaningless estimate")
    z = rng.standard_normal(n)
    k = two_stage_threshold(params)
    lo = 0.5 * k if lo is None else lo
    hi = 1.5 * k if hi is None else hi
    f_lo, f_hi = stage2_advantage(params, lo, z), stage2_advantage(params, hi, z)
    if f_lo > 0 or f_hi <= 0:
        raise ValueError(f"boundary not bracketed by [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stage2_advantage(params, mid, z) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# lattice and backward induction

@dataclass
class LatticeSpec:
    """Per-stage geometric grids and transition matrices between them.

    ``price_grids[t-1]`` holds the stage-``t`` nodes; ``price_trans[t-1]``
    maps stage ``t`` to ``t+1``. Stage 1 is the single known starting node.
    Price-only lattices carry a one-node ``inf`` demand grid.
    """

    params: EnvParams
    price_grids: list
    demand_grids: list
    price_trans: list
    demand_trans: list
    coverage: float = 4.0

    @property
    def horizon(self) -> int:
        return self.params.horizon

    def price_cell(self, t: int, price: float) -> float:
        """Width of the stage-``t`` grid cell nearest to ``price``."""
        g = self.price_grids[t - 1]
        if g.size == 1:
            return 0.0
        j = min(int(np.searchsorted(g, price)), g.size - 1)
        return float(g[j] - g[j - 1]) if j else float(g[1] - g[0])


def _stage_grid(x1, drift, vol, t, n, coverage):
    if t == 1:
        return np.array([x1], dtype=float)
    center = math.log(x1) + (t - 1) * drift
    half = coverage * vol * math.sqrt(t - 1)
    return np.exp(np.linspace(center - half, center + half, n))


def _transition(src, dst, drift, vol):
    """Row-stochastic matrix: lognormal step from each src node to dst cells."""
    logd = np.log(dst)
    edges = np.concatenate([[-np.inf], 0.5 * (logd[1:] + logd[:-1]), [np.inf]])
    mean = np.log(src)[:, None] + drift
    cdf = ndtr((edges[None, :] - mean) / vol)
    P = np.diff(cdf, axis=1)
    return P / P.sum(axis=1, keepdims=True)


def build_lattice(params: EnvParams, nodes_per_stage: int = 400, demand_nodes: int = 200,
                  coverage: float = 4.0) -> LatticeSpec:
    """Geometric grids centred on the median path, spanning ``coverage`` log-sds."""
    check_positive_int(nodes_per_stage, "nodes_per_stage", 3)
    T = params.horizon
    pg = [_stage_grid(params.initial_price, params.price_drift, params.price_vol, t,
                      nodes_per_stage, coverage) for t in range(1, T + 1)]
    pt = [_transition(pg[t], pg[t + 1], params.price_drift, params.price_vol) for t in range(T - 1)]
    if params.demand_enabled:
        check_positive_int(demand_nodes, "demand_nodes", 3)
        dg = [_stage_grid(params.initial_demand, params.demand_drift, params.demand_vol, t,
                          demand_nodes, coverage) for t in range(1, T + 1)]
        dt = [_transition(dg[t], dg[t + 1], params.demand_drift, params.demand_vol)
              for t in range(T - 1)]
    else:
        dg = [np.array([np.inf]) for _ in range(T)]
        dt = [np.ones((1, 1)) for _ in range(T - 1)]
    return LatticeSpec(params, pg, dg, pt, dt, coverage)


def _nearest(grid, values):
    """Index of the nearest node in log space; ``inf`` grids map everything to 0."""
    values = np.asarray(values, dtype=float)
    if grid.size == 1:
        return np.zeros(values.shape, dtype=np.int64)
    logg = np.log(grid)
    mids = 0.5 * (logg[1:] + logg[:-1])
    return np.searchsorted(mids, np.log(values))


@dataclass
class DPSolution:
    """Backward-induction result on a lattice.

    For stage ``t`` (1-based), ``values[t-1]`` has shape
    ``(n_price, n_demand, K+1)`` indexed by installed units, ``q[t-1]`` adds a
    trailing decision axis (``-inf`` where infeasible) and ``decisions[t-1]``
    holds the optimal decision (smallest on ties).
    """

    lattice: LatticeSpec
    values: list
    q: list
    decisions: list

    @property
    def params(self) -> EnvParams:
        return self.lattice.params

    @property
    def value(self) -> float:
        """Optimal expected discounted profit from the starting state."""
        return float(self.values[0][0, 0, 0])

    def decide_batch(self, t, price, demand, installed, rng=None) -> np.ndarray:
        """Optimal decision at the lattice node nearest to each state."""
        lat = self.lattice
        ip = _nearest(lat.price_grids[t - 1], price)
        idm = _nearest(lat.demand_grids[t - 1], demand)
        return self.decisions[t - 1][ip, idm, np.asarray(installed, dtype=np.int64)]

    def __call__(self, state: EnvState) -> int:
        return int(self.decide_batch(state.t, state.price, state.demand, state.installed))

    def advantage(self, t: int, installed: int = 0, decision: int = 1, demand_index: int = 0):
        """``Q(add=decision) - Q(add=0)`` along the stage-``t`` price grid."""
        q = self.q[t - 1][:, demand_index, installed]
        return q[:, decision] - q[:, 0]

    def threshold(self, t: int, installed: int = 0, decision: int = 1, demand_index: int = 0) -> float:
        """Price where adding ``decision`` units first beats adding none."""
        return threshold_from_advantage(self.lattice.price_grids[t - 1],
                                        self.advantage(t, installed, decision, demand_index))

    def to_csv(self, digest: str = "") -> str:
        """Rows ``(t, price, demand, installed, decision, value)``."""
        buf = io.StringIO()
        if digest:
            buf.write(f"# config_digest={digest}\n")
        buf.write("t,price,demand,installed,decision,value\n")
        lat = self.lattice
        for t in range(1, lat.horizon + 1):
            pg, dg = lat.price_grids[t - 1], lat.demand_grids[t - 1]
            V, D = self.values[t - 1], self.decisions[t - 1]
            for k in range(V.shape[2]):
                for i, p in enumerate(pg):
                    for j, d in enumerate(dg):
                        buf.write(f"{t},{p!r},{d!r},{k},{D[i, j, k]},{V[i, j, k]!r}\n")
        return buf.getvalue()


def backward_induction(lattice: LatticeSpec, params: EnvParams | None = None) -> DPSolution:
    """Exact finite-horizon dynamic programme on ``lattice``.

    ``V_t(p, d, k) = max_x [g_t(p, d, k, x) + E V_{t+1}(p', d', k + x)]`` with
    ``V_{T+1} = 0``. Rewards are the discounted stage profits, so no extra
    discount factor enters the recursion.
    """
    params = params or lattice.params
    T, K = params.horizon, params.max_capacity
    values, qs, decisions = [None] * T, [None] * T, [None] * T
    next_v = None
    for t in range(T, 0, -1):
        pg = lattice.price_grids[t - 1][:, None]
        dg = lattice.demand_grids[t - 1][None, :]
        shape = (pg.shape[0], dg.shape[1])
        if next_v is None:
            cont = np.zeros(shape + (K + 1,))
        else:
            Pp, Pd = lattice.price_trans[t - 1], lattice.demand_trans[t - 1]
            cont = np.einsum("ia,abk,jb->ijk", Pp, next_v, Pd, optimize=True)
        q = np.full(shape + (K + 1, K + 1), -np.inf)
        for k in range(K + 1):
            for x in range(K + 1 - k):
                q[:, :, k, x] = stage_reward(params, t, pg, dg, k, x) + cont[:, :, k + x]
        decisions[t - 1] = q.argmax(axis=3)
        values[t - 1] = q.max(axis=3)
        qs[t - 1] = q
        next_v = values[t - 1]
    return DPSolution(lattice, values, qs, decisions)


class BackwardInductionSolver(BaseEstimator):
    """Estimator wrapper: ``fit(env_params)`` solves the lattice DP, ``predict(X)`` decides."""

    def __init__(self, price_nodes=400, demand_nodes=200, coverage=4.0):
        self.price_nodes = price_nodes
        self.demand_nodes = demand_nodes
        self.coverage = coverage

    def fit(self, params, y=None):
        self.lattice_ = build_lattice(params, self.price_nodes, self.demand_nodes, self.coverage)
        self.solution_ = backward_induction(self.lattice_)
        self.value_ = self.solution_.value
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "solution_")
        X = check_states(X, self.lattice_.params)
        out = np.empty(len(X), dtype=np.int64)
        for t in np.unique(X[:, 0]).astype(int):
            rows = X[:, 0] == t
            out[rows] = self.solution_.decide_batch(t, X[rows, 1], X[rows, 2],
                                                    X[rows, 3].astype(np.int64))
        return out


# policy evaluation

class NeverInvest:
    def decide_batch(self, t, price, demand, installed, rng=None):
        return np.zeros(np.shape(price), dtype=np.int64)


@dataclass
class InvestAtFirstStage:
    """Install the whole budget at stage 1."""

    max_capacity: int

    def decide_batch(self, t, price, demand, installed, rng=None):
        return np.full(np.shape(price), self.max_capacity if t == 1 else 0, dtype=np.int64)


@dataclass
class RandomFeasible:
    """Uniform draw over the feasible decisions at every stage."""

    max_capacity: int

    def decide_batch(self, t, price, demand, installed, rng=None):
        room = self.max_capacity - np.asarray(installed) + 1
        return np.floor(rng.random(np.shape(price)) * room).astype(np.int64)


class _ScalarPolicy:
    def __init__(self, fn):
        self.fn = fn

    def decide_batch(self, t, price, demand, installed, rng=None):
        return np.array([self.fn(EnvState(t, float(p), float(d), int(k)))
                         for p, d, k in zip(price, demand, installed)], dtype=np.int64)


def as_batch_policy(policy):
    """Wrap a ``state -> decision`` callable unless it already decides in batches."""
    return policy if hasattr(policy, "decide_batch") else _ScalarPolicy(policy)


@dataclass
class EvalReport:
    """Monte Carlo estimate of a policy's expected discounted profit.

    With a single replication the standard error is reported as 0.
    """

    replications: int
    mean: float
    stderr: float
    ci95: tuple
    decision_freq: np.ndarray  # (T, K+1) share of rollouts choosing each decision per stage
    profits: np.ndarray = field(repr=False, default=None)

    def to_text(self) -> str:
        lines = [f"replications: {self.replications}",
                 f"mean_profit: {self.mean!r}",
                 f"stderr: {self.stderr!r}",
                 f"ci95: [{self.ci95[0]!r}, {self.ci95[1]!r}]"]
        for t, row in enumerate(self.decision_freq, start=1):
            freqs = " ".join(f"x={x}:{f:.6f}" for x, f in enumerate(row))
            lines.append(f"stage {t}: {freqs}")
        return "\n".join(lines) + "\n"

    def to_csv(self, digest: str = "") -> str:
        buf = io.StringIO()
        if digest:
            buf.write(f"# config_digest={digest}\n")
        w = csv.writer(buf, lineterminator="\n")
        K1 = self.decision_freq.shape[1]
        w.writerow(["replications", "mean", "stderr", "ci_low", "ci_high"]
                   + [f"freq_t{t}_x{x}" for t in range(1, len(self.decision_freq) + 1)
                      for x in range(K1)])
        w.writerow([self.replications, repr(self.mean), repr(self.stderr), repr(self.ci95[0]),
                    repr(self.ci95[1])] + [repr(float(f)) for f in self.decision_freq.ravel()])
        return buf.getvalue()


def _rollout_chunk(policy, params: EnvParams, m: int, seed: int, chunk: int):
    T, K = params.horizon, params.max_capacity
    rng = derive_rng(seed, f"eval/{chunk}")
    zp = rng.standard_normal((m, T - 1))
    zd = rng.standard_normal((m, T - 1)) if params.demand_enabled else None
    policy_rng = derive_rng(seed, f"eval-policy/{chunk}")
    price = np.full(m, params.initial_price)
    demand = np.full(m, params.initial_demand if params.demand_enabled else np.inf)
    installed = np.zeros(m, dtype=np.int64)
    profit = np.zeros(m)
    counts = np.zeros((T, K + 1), dtype=np.int64)
    for t in range(1, T + 1):
        x = np.asarray(policy.decide_batch(t, price, demand, installed, policy_rng), dtype=np.int64)
        if (x < 0).any() or (installed + x > K).any():
            raise InfeasibleDecisionError(f"policy broke the capacity budget at stage {t}")
        profit += stage_reward(params, t, price, demand, installed, x)
        counts[t - 1] += np.bincount(x, minlength=K + 1)
        installed = installed + x
        if t < T:
            price = price * np.exp(params.price_drift + params.price_vol * zp[:, t - 1])
            if zd is not None:
                demand = demand * np.exp(params.demand_drift + params.demand_vol * zd[:, t - 1])
    return profit, counts


def evaluate_policy(policy, params: EnvParams, M: int, seed: int = 0, *, n_jobs: int = 1,
                    chunk_size: int = 8192) -> EvalReport:
    """Simulate ``M`` independent rollouts of ``policy`` and summarise the profit.

    Rollouts are split into fixed-size chunks with their own derived random
    streams, so the report depends only on ``(seed, M, chunk_size)`` and not
    on ``n_jobs``. Exogenous price and demand paths for a given seed are the
    same for every policy, which makes paired comparisons low-variance.
    """
    M = check_positive_int(M, "M")
    policy = as_batch_policy(policy)
    sizes = [min(chunk_size, M - s) for s in range(0, M, chunk_size)]
    jobs = [(policy, params, m, seed, c) for c, m in enumerate(sizes)]
    if n_jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(lambda a: _rollout_chunk(*a), jobs))
    else:
        results = [_rollout_chunk(*a) for a in jobs]
    profits = np.concatenate([r[0] for r in results])
    counts = sum(r[1] for r in results)
    mean = float(profits.mean())
    stderr = float(profits.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    return EvalReport(M, mean, stderr, (mean - 1.96 * stderr, mean + 1.96 * stderr),
                      counts / M, profits)


# decision surfaces

@dataclass
class PolicyMap:
    stage: int
    installed: int
    prices: np.ndarray
    demands: np.ndarray
    decisions: np.ndarray  # (n_price, n_demand)

    def to_csv(self, digest: str = "") -> str:
        buf = io.StringIO()
        if digest:
            buf.write(f"# config_digest={digest}\n")
        buf.write("stage,installed,price,demand,decision\n")
        for i, p in enumerate(self.prices):
            for j, d in enumerate(self.demands):
                buf.write(f"{self.stage},{self.installed},{p!r},{d!r},{self.decisions[i, j]}\n")
        return buf.getvalue()


def extract_policy_map(policy, stage: int, prices, demands, installed: int) -> PolicyMap:
    """Decision of ``policy`` at every ``(price, demand)`` grid point."""
    prices = np.atleast_1d(np.asarray(prices, dtype=float))
    demands = np.atleast_1d(np.asarray(demands, dtype=float))
    P, D = np.meshgrid(prices, demands, indexing="ij")
    k = np.full(P.size, installed, dtype=np.int64)
    x = as_batch_policy(policy).decide_batch(stage, P.ravel(), D.ravel(), k)
    return PolicyMap(stage, installed, prices, demands, np.asarray(x).reshape(P.shape))


def stage_grid(params: EnvParams, stage: int, n_price: int = 41, n_demand: int = 41,
               z: float = 1.645):
    """Evenly spaced probe grids over the central band of the stage marginals."""
    def band(x1, drift, vol, n):
        if stage == 1:
            return np.array([x1])
        c, h = math.log(x1) + (stage - 1) * drift, z * vol * math.sqrt(stage - 1)
        return np.linspace(math.exp(c - h), math.exp(c + h), n)

    prices = band(params.initial_price, params.price_drift, params.price_vol, n_price)
    if params.demand_enabled:
        demands = band(params.initial_demand, params.demand_drift, params.demand_vol, n_demand)
    else:
        demands = np.array([np.inf])
    return prices, demands


def threshold_from_advantage(prices, advantage) -> float:
    """Price where ``advantage`` first turns positive, by linear interpolation.

    Decisions flip where the advantage crosses zero; exact zeros count as no
    flip, which resolves ties to the lower decision. Returns ``nan`` when no
    flip occurs and the first price if the advantage is positive throughout.
    """
    prices = np.asarray(prices, dtype=float)
    adv = np.asarray(advantage, dtype=float)
    pos = np.flatnonzero(adv > 0)
    if pos.size == 0:
        return math.nan
    j = int(pos[0])
    if j == 0:
        return float(prices[0])
    a0, a1 = adv[j - 1], adv[j]
    return float(prices[j - 1] + (prices[j] - prices[j - 1]) * (-a0) / (a1 - a0))


def learned_threshold(artifact, stage: int, installed: int = 0, decision: int = 1,
                      prices=None, demand: float | None = None) -> float:
    """Threshold price implied by a trained network's Q-values."""
    params = artifact.params
    if prices is None:
        k = two_stage_threshold(params)
        prices = np.linspace(0.5 * k, 1.5 * k, 20001)
    if demand is None:
        demand = np.inf if not params.demand_enabled else params.initial_demand
    X = np.column_stack([np.full(len(prices), stage), prices, np.full(len(prices), demand),
                         np.full(len(prices), installed)])
    q = artifact.q_values(X)
    return threshold_from_advantage(prices, q[:, decision] - q[:, 0])


def frontier_disagreements(candidate, reference) -> np.ndarray:
    """Cells where two decision maps differ away from the reference frontier.

    A cell lies on the frontier band when any of its eight neighbours has a
    different reference decision. Returns a boolean mask of disagreements
    outside that band.
    """
    cand = np.asarray(candidate)
    ref = np.asarray(reference)
    padded = np.pad(ref, 1, mode="edge")
    n, m = ref.shape
    band = np.zeros_like(ref, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            band |= padded[1 + di:1 + di + n, 1 + dj:1 + dj + m] != ref
    return (cand != ref) & ~band


# learned policy versus the lattice optimum

@dataclass
class ComparisonReport:
    """Paired comparison of a trained policy against the DP optimum.

    Thresholds are reported for the price-only variant (stages 2..T with
    nothing installed). Surface counts are reported for the demand variant:
    per ``(stage, installed)``, the number of probe cells where the policies
    disagree away from the DP frontier band.
    """

    thresholds: list  # (stage, dp, learned, delta)
    surfaces: list  # (stage, installed, disagree_fraction, outside_band)
    learned: EvalReport
    optimal: EvalReport
    dp_value: float
    threshold_tol: float
    max_gap: float

    @property
    def profit_gap(self) -> float:
        return self.optimal.mean - self.learned.mean

    @property
    def percent_gap(self) -> float:
        return 100.0 * self.profit_gap / abs(self.optimal.mean) if self.optimal.mean else math.nan

    @property
    def passed(self) -> bool:
        ok_thr = all(abs(d) <= self.threshold_tol for _, _, _, d in self.thresholds)
        return bool(ok_thr and self.percent_gap <= 100.0 * self.max_gap)

    def to_text(self) -> str:
        lines = []
        for t, dp, dqn, d in self.thresholds:
            lines.append(f"stage {t}: dp_threshold={dp:.6f} learned_threshold={dqn:.6f} delta={d:+.6f}")
        for t, k, frac, n_out in self.surfaces:
            lines.append(f"stage {t} installed {k}: disagreement={frac:.4f} outside_frontier_band={n_out}")
        lines += [f"dp_value: {self.dp_value!r}",
                  f"learned_mean: {self.learned.mean!r} (stderr {self.learned.stderr!r})",
                  f"optimal_mean: {self.optimal.mean!r} (stderr {self.optimal.stderr!r})",
                  f"profit_gap: {self.profit_gap!r}",
                  f"percent_gap: {self.percent_gap!r}",
                  f"pass: {str(self.passed).lower()}"]
        return "\n".join(lines) + "\n"

    def to_csv(self, digest: str = "") -> str:
        buf = io.StringIO()
        if digest:
            buf.write(f"# config_digest={digest}\n")
        buf.write("item,stage,installed,dp,learned,delta\n")
        for t, dp, dqn, d in self.thresholds:
            buf.write(f"threshold,{t},0,{dp!r},{dqn!r},{d!r}\n")
        for t, k, frac, n_out in self.surfaces:
            buf.write(f"surface_disagreement,{t},{k},0,{frac!r},{n_out}\n")
        buf.write(f"profit,,,{self.optimal.mean!r},{self.learned.mean!r},{-self.profit_gap!r}\n")
        buf.write(f"percent_gap,,,,,{self.percent_gap!r}\n")
        buf.write(f"pass,,,,,{int(self.passed)}\n")
        return buf.getvalue()


def compare_to_dp(artifact, solution: DPSolution, M: int = 100_000, seed: int = 0, *,
                  threshold_tol: float = 0.005, max_gap: float | None = None,
                  n_price: int = 41, n_demand: int = 41) -> ComparisonReport:
    """Threshold deltas, decision-surface agreement and paired profit gap.

    ``max_gap`` defaults to 2% for the price-only variant and 5% with demand.
    """
    params = solution.params
    thresholds, surfaces = [], []
    if not params.demand_enabled:
        for t in range(2, params.horizon + 1):
            dp = solution.threshold(t)
            dqn = learned_threshold(artifact, t)
            delta = dqn - dp
            thresholds.append((t, dp, dqn, math.inf if math.isnan(delta) else delta))
    else:
        for t in range(2, params.horizon + 1):
            prices, demands = stage_grid(params, t, n_price, n_demand)
            for k in range(min(t - 1, params.max_capacity)):
                a = extract_policy_map(artifact, t, prices, demands, k).decisions
                b = extract_policy_map(solution, t, prices, demands, k).decisions
                surfaces.append((t, k, float(np.mean(a != b)), int(frontier_disagreements(a, b).sum())))
    if max_gap is None:
        max_gap = 0.05 if params.demand_enabled else 0.02
    learned = evaluate_policy(artifact, params, M, seed)
    optimal = evaluate_policy(solution, params, M, seed)
    return ComparisonReport(thresholds, surfaces, learned, optimal, solution.value,
                            threshold_tol, max_gap)
