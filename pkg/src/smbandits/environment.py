"""Instance generation, the round loop, and regret accounting.

An instance is a ground-truth utility matrix plus the processes that drive a
simulation: arrivals, feedback noise, and (for typed/linear preferences) the
structure the learner is told about. ``run`` executes one policy against one
instance; ``sweep`` fans replicas out over seeds and cells.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import policies as pol
from .confidence import ConfidenceConfig, ConfidenceSets, Mode, init_confidence
from .errors import ConfigError
from .instability import ntu_subset_instability, subset_instability_value
from .market import (
    Matching,
    MarketOutcome,
    UtilityMatrix,
    customer,
    is_stable_ntu,
    is_stable_tu,
    provider,
    stability_inequalities_hold,
)

_NTU_EXACT_SCORING_MAX_CUSTOMERS = 8
_TOTAL_ROUNDS_GUARD = 20_000_000

_STREAM_ARRIVALS = 1
_STREAM_NOISE = 2
_MASK64 = (1 << 64) - 1


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based RNG split: one Philox key per (seed, stream) pair."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# --------------------------------------------------------------------------
# Instance descriptions


@dataclass(frozen=True)
class UnstructuredClass:
    kind: str = "unstructured"


@dataclass(frozen=True)
class TypedClass:
    num_types: int
    customer_types: np.ndarray
    provider_types: np.ndarray
    type_values: np.ndarray  # (num_types, num_types), f(own type, partner type)
    kind: str = "typed"


@dataclass(frozen=True)
class LinearClass:
    dim: int
    customer_hidden: np.ndarray
    provider_hidden: np.ndarray
    customer_contexts: np.ndarray
    provider_contexts: np.ndarray
    kind: str = "linear"


@dataclass(frozen=True)
class ArrivalSpec:
    kind: str = "all"  # all | iid_subset | fixed
    probability: float = 1.0
    schedule: tuple = ()  # fixed mode: tuple of (customer tuple, provider tuple)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"  # gaussian | bernoulli
    sigma: float = 1.0


@dataclass(frozen=True)
class MarketInstance:
    truth: UtilityMatrix
    klass: object
    arrival: ArrivalSpec
    noise: NoiseSpec
    seed: int

    @property
    def num_customers(self) -> int:
        return self.truth.num_customers

    @property
    def num_providers(self) -> int:
        return self.truth.num_providers

    def snapshot(self) -> dict:
        """JSON-serializable description: agents, class parameters, truth."""
        out = {
            "schema_version": 1,
            "customers": self.num_customers,
            "providers": self.num_providers,
            "customer_values": self.truth.customer_values.tolist(),
            "provider_values": self.truth.provider_values.tolist(),
            "class": getattr(self.klass, "kind", "unstructured"),
            "seed": self.seed,
        }
        if isinstance(self.klass, TypedClass):
            out["customer_types"] = self.klass.customer_types.tolist()
            out["provider_types"] = self.klass.provider_types.tolist()
            out["num_types"] = self.klass.num_types
        if isinstance(self.klass, LinearClass):
            out["dim"] = self.klass.dim
            out["customer_contexts"] = self.klass.customer_contexts.tolist()
            out["provider_contexts"] = self.klass.provider_contexts.tolist()
        return out


def _unit_vectors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Uniform directions scaled by Uniform[0,1]; all inside the unit ball."""
    raw = rng.normal(size=(count, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return raw / norms * rng.uniform(0.0, 1.0, size=(count, 1))


def gen_instance(
    klass: str,
    num_customers: int,
    num_providers: int,
    seed: int,
    *,
    num_types: int = 3,
    dim: int = 3,
    arrival: ArrivalSpec | None = None,
    noise: NoiseSpec | None = None,
) -> MarketInstance:
    """Deterministic instance of the requested preference class."""
    if num_customers <= 0 or num_providers <= 0:
        raise ConfigError("market sizes must be positive")
    rng = stream_rng(seed, 0)
    arrival = arrival or ArrivalSpec()
    noise = noise or NoiseSpec()

    if klass == "unstructured":
        cv = rng.uniform(-1.0, 1.0, (num_customers, num_providers))
        pv = rng.uniform(-1.0, 1.0, (num_providers, num_customers))
        return MarketInstance(UtilityMatrix(cv, pv), UnstructuredClass(), arrival, noise, seed)

    if klass == "typed":
        if num_types <= 0:
            raise ConfigError("num_types must be positive")
        f = rng.uniform(-1.0, 1.0, (num_types, num_types))
        tc = rng.integers(0, num_types, num_customers)
        tp = rng.integers(0, num_types, num_providers)
        cv = f[np.ix_(tc, tp)]
        pv = f[np.ix_(tp, tc)]
        spec = TypedClass(num_types, tc, tp, f)
        return MarketInstance(UtilityMatrix(cv, pv), spec, arrival, noise, seed)

    if klass == "linear":
        if dim < 1:
            raise ConfigError("linear class needs dim >= 1")
        phi_c = _unit_vectors(rng, num_customers, dim)
        phi_p = _unit_vectors(rng, num_providers, dim)
        ctx_c = _unit_vectors(rng, num_customers, dim)
        ctx_p = _unit_vectors(rng, num_providers, dim)
        cv = phi_c @ ctx_p.T
        pv = phi_p @ ctx_c.T
        spec = LinearClass(dim, phi_c, phi_p, ctx_c, ctx_p)
        return MarketInstance(UtilityMatrix(cv, pv), spec, arrival, noise, seed)

    raise ConfigError(f"unknown preference class {klass!r}")


def gen_hard_instance(K: int, horizon: int, seed: int, rho: float | None = None) -> MarketInstance:
    """The imbalanced worst-case family for unstructured preferences.

    K customers face 10*K*ceil(log(K*horizon)) providers grouped into blocks of
    ceil(log K); each customer values one uniformly chosen block at 1/2 + rho
    and everything else at 1/2, providers value everyone at zero, and feedback
    is Bernoulli.
    """
    if K < 2:
        raise ConfigError("hard family needs K >= 2")
    if rho is None:
        rho = math.sqrt(K / float(horizon))
    if not 0.0 < rho <= 0.5:
        raise ConfigError("rho must lie in (0, 0.5]")
    rng = stream_rng(seed, 0)
    block = max(1, math.ceil(math.log(K)))
    num_providers = 10 * K * math.ceil(math.log(K * horizon))
    cv = np.full((K, num_providers), 0.5)
    alpha = rng.integers(0, K, K)
    for i in range(K):
        start = int(alpha[i]) * block
        cv[i, start : start + block] = 0.5 + rho
    pv = np.zeros((num_providers, K))
    return MarketInstance(
        UtilityMatrix(cv, pv),
        UnstructuredClass(),
        ArrivalSpec(),
        NoiseSpec(kind="bernoulli"),
        seed,
    )


# --------------------------------------------------------------------------
# Policy construction


@dataclass(frozen=True)
class PolicySpec:
    """Declarative policy description; `build` instantiates fresh state."""

    kind: str  # match_ucb | match_typed_ucb | match_lin_ucb | match_ucb_prime
    #          | match_ntu_ucb | etc | revenue_frictions
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    epsilon: float = 0.3
    etc_pulls_per_pair: int | None = None

    def conf_mode(self) -> Mode:
        if self.kind == "match_typed_ucb":
            return Mode.TYPED
        if self.kind == "match_lin_ucb":
            return Mode.LINEAR
        return Mode.UNSTRUCTURED

    def build(self, instance: MarketInstance, horizon: int) -> pol.Policy:
        conf = _confidence_for(self, instance)
        if self.kind in ("match_ucb", "match_typed_ucb", "match_lin_ucb"):
            return pol.MatchUcbPolicy(conf, horizon)
        if self.kind == "match_ucb_prime":
            return pol.MatchUcbPrimePolicy(conf, horizon)
        if self.kind == "match_ntu_ucb":
            return pol.MatchNtuUcbPolicy(conf, horizon)
        if self.kind == "etc":
            return pol.EtcPolicy(conf, horizon, self.etc_pulls_per_pair)
        if self.kind == "revenue_frictions":
            return pol.RevenueFrictionsPolicy(conf, horizon, self.epsilon)
        raise ConfigError(f"unknown policy kind {self.kind!r}")


def _confidence_for(spec: PolicySpec, instance: MarketInstance) -> ConfidenceSets:
    mode = spec.conf_mode()
    n_c, n_p = instance.num_customers, instance.num_providers
    if mode is Mode.TYPED:
        if not isinstance(instance.klass, TypedClass):
            raise ConfigError("typed policy requires a typed instance")
        return init_confidence(
            mode,
            n_c,
            n_p,
            customer_types=instance.klass.customer_types,
            provider_types=instance.klass.provider_types,
            num_types=instance.klass.num_types,
            config=spec.confidence,
        )
    if mode is Mode.LINEAR:
        if not isinstance(instance.klass, LinearClass):
            raise ConfigError("linear policy requires a linear instance")
        return init_confidence(
            mode,
            n_c,
            n_p,
            customer_contexts=instance.klass.customer_contexts,
            provider_contexts=instance.klass.provider_contexts,
            config=spec.confidence,
        )
    return init_confidence(mode, n_c, n_p, config=spec.confidence)


# --------------------------------------------------------------------------
# The round loop


@dataclass
class RegretTrace:
    """Per-round diagnostics of one replica. Column-major numpy storage."""

    seed: int
    policy_kind: str
    horizon: int
    instability: np.ndarray
    width_sum: np.ndarray
    certified_bound: np.ndarray
    revenue: np.ndarray
    containment: np.ndarray  # bool: all intervals contained truth this round
    stable_truth: np.ndarray  # bool: outcome stable for the true utilities
    bound_only: np.ndarray  # bool: instability column holds a bound, not the exact value
    wall_clock: float = 0.0
    outcomes: list[MarketOutcome] | None = None  # populated when record_outcomes=True

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.instability)

    @property
    def cum_revenue(self) -> np.ndarray:
        return np.cumsum(self.revenue)


def run(
    instance: MarketInstance,
    spec: PolicySpec,
    horizon: int,
    stability_eps: float = 0.0,
    record_outcomes: bool = False,
) -> RegretTrace:
    """Execute one replica: deterministic in (instance.seed, spec, horizon).

    ``stability_eps`` only affects the ``stable_truth`` diagnostic column: the
    revenue policy is judged against eps-stability of its published outcome;
    every other TU policy against exact stability of its zero-sum outcome.
    ``record_outcomes`` keeps each round's scored outcome on the trace for
    post-hoc inspection.
    """
    started = time.perf_counter()
    policy = spec.build(instance, horizon)
    arrivals_rng = stream_rng(instance.seed, _STREAM_ARRIVALS)
    noise_rng = stream_rng(instance.seed, _STREAM_NOISE)
    truth = instance.truth
    n_c, n_p = instance.num_customers, instance.num_providers
    ntu = spec.kind == "match_ntu_ucb"

    cols = {
        name: np.zeros(horizon)
        for name in ("instability", "width_sum", "certified_bound", "revenue")
    }
    containment = np.zeros(horizon, dtype=bool)
    stable_truth = np.zeros(horizon, dtype=bool)
    bound_only = np.zeros(horizon, dtype=bool)
    outcomes: list[MarketOutcome] | None = [] if record_outcomes else None

    for t in range(horizon):
        cust, prov = _draw_arrivals(instance.arrival, n_c, n_p, t, arrivals_rng)
        contained = policy.conf.contains(truth)

        def feedback(matching: Matching) -> dict:
            return _observe(truth, matching, instance.noise, noise_rng)

        decision = policy.step((cust, prov), feedback)
        scored = decision.scored_outcome

        truth_sub = truth.restrict(cust, prov)
        sub_outcome = _restrict_outcome(scored, cust, prov)
        if ntu:
            if len(cust) <= _NTU_EXACT_SCORING_MAX_CUSTOMERS:
                inst = ntu_subset_instability(truth_sub, sub_outcome.matching).value
            else:
                inst = decision.certified_instability_bound
                bound_only[t] = True
            stable_truth[t] = is_stable_ntu(truth_sub, sub_outcome.matching)
        else:
            inst = subset_instability_value(truth_sub, sub_outcome)
            if stability_eps > 0:
                judged = _restrict_outcome(decision.outcome, cust, prov)
                stable_truth[t] = stability_inequalities_hold(truth_sub, judged, stability_eps)
            else:
                stable_truth[t] = is_stable_tu(truth_sub, sub_outcome, 0.0)

        cols["instability"][t] = inst
        cols["width_sum"][t] = decision.width_sum
        cols["certified_bound"][t] = decision.certified_instability_bound
        cols["revenue"][t] = decision.revenue
        containment[t] = contained
        if outcomes is not None:
            outcomes.append(decision.scored_outcome)

    return RegretTrace(
        seed=instance.seed,
        policy_kind=spec.kind,
        horizon=horizon,
        instability=cols["instability"],
        width_sum=cols["width_sum"],
        certified_bound=cols["certified_bound"],
        revenue=cols["revenue"],
        containment=containment,
        stable_truth=stable_truth,
        bound_only=bound_only,
        wall_clock=time.perf_counter() - started,
        outcomes=outcomes,
    )


def _draw_arrivals(
    spec: ArrivalSpec, n_c: int, n_p: int, t: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    if spec.kind == "all":
        return np.arange(n_c), np.arange(n_p)
    if spec.kind == "iid_subset":
        cust = np.flatnonzero(rng.random(n_c) < spec.probability)
        prov = np.flatnonzero(rng.random(n_p) < spec.probability)
        return cust, prov
    if spec.kind == "fixed":
        cust_t, prov_t = spec.schedule[t % len(spec.schedule)]
        return np.asarray(cust_t, dtype=int), np.asarray(prov_t, dtype=int)
    raise ConfigError(f"unknown arrival kind {spec.kind!r}")


def _observe(
    truth: UtilityMatrix, matching: Matching, noise: NoiseSpec, rng: np.random.Generator
) -> dict:
    pairs = matching.pairs
    if not pairs:
        return {}
    means = np.empty(2 * len(pairs))
    for k, (i, j) in enumerate(pairs):
        means[2 * k] = truth.customer_values[i, j]
        means[2 * k + 1] = truth.provider_values[j, i]
    if noise.kind == "gaussian":
        values = means + noise.sigma * rng.standard_normal(means.size)
    elif noise.kind == "bernoulli":
        if means.min() < 0.0 or means.max() > 1.0:
            raise ConfigError("bernoulli feedback needs utilities in [0, 1]")
        values = (rng.random(means.size) < means).astype(float)
    else:
        raise ConfigError(f"unknown noise kind {noise.kind!r}")
    obs = {}
    for k, (i, j) in enumerate(pairs):
        obs[customer(i)] = float(values[2 * k])
        obs[provider(j)] = float(values[2 * k + 1])
    return obs


def _restrict_outcome(outcome: MarketOutcome, cust: np.ndarray, prov: np.ndarray) -> MarketOutcome:
    """Reindex an outcome onto the arrival submarket."""
    if len(cust) == len(outcome.customer_transfers) and len(prov) == len(outcome.provider_transfers):
        return outcome
    c_pos = {int(g): k for k, g in enumerate(cust)}
    p_pos = {int(g): k for k, g in enumerate(prov)}
    pairs = [(c_pos[i], p_pos[j]) for i, j in outcome.matching.pairs]
    return MarketOutcome(
        Matching(pairs),
        outcome.customer_transfers[cust],
        outcome.provider_transfers[prov],
    )


# --------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class SweepCell:
    """One experiment cell: an instance recipe plus a policy and horizon.

    ``truth`` pins the utility matrix (fixed-instance mode); the per-seed
    randomness then drives only arrivals and noise.
    """

    name: str
    klass: str
    num_customers: int
    num_providers: int
    horizon: int
    policy: PolicySpec
    seeds: tuple[int, ...]
    num_types: int = 3
    dim: int = 3
    arrival: ArrivalSpec = field(default_factory=ArrivalSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    stability_eps: float = 0.0
    truth: UtilityMatrix | None = None


def _run_cell_seed(args: tuple[SweepCell, int]) -> tuple[str, int, RegretTrace]:
    cell, seed = args
    if cell.truth is not None:
        instance = MarketInstance(cell.truth, UnstructuredClass(), cell.arrival, cell.noise, seed)
    else:
        instance = gen_instance(
            cell.klass,
            cell.num_customers,
            cell.num_providers,
            seed,
            num_types=cell.num_types,
            dim=cell.dim,
            arrival=cell.arrival,
            noise=cell.noise,
        )
    trace = run(instance, cell.policy, cell.horizon, stability_eps=cell.stability_eps)
    return cell.name, seed, trace


def sweep(cells: list[SweepCell], threads: int = 1) -> dict[str, dict[int, RegretTrace]]:
    """Run every (cell, seed) replica; aggregation order is deterministic."""
    total_rounds = sum(cell.horizon * len(cell.seeds) for cell in cells)
    if total_rounds > _TOTAL_ROUNDS_GUARD:
        raise ConfigError(f"sweep of {total_rounds} rounds exceeds the guard ({_TOTAL_ROUNDS_GUARD})")
    jobs = [(cell, seed) for cell in cells for seed in cell.seeds]
    results: dict[str, dict[int, RegretTrace]] = {cell.name: {} for cell in cells}
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for name, seed, trace in pool.map(_run_cell_seed, jobs):
                results[name][seed] = trace
    else:
        for job in jobs:
            name, seed, trace = _run_cell_seed(job)
            results[name][seed] = trace
    return results


def mean_stderr(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    if values.size < 2:
        return mean, 0.0
    return mean, float(values.std(ddof=1) / math.sqrt(values.size))


def aggregate_curves(traces: dict[int, RegretTrace]) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard-error curves of cumulative regret across replicas."""
    stacked = np.stack([traces[s].cum_regret for s in sorted(traces)])
    mean = stacked.mean(axis=0)
    if stacked.shape[0] < 2:
        return mean, np.zeros_like(mean)
    stderr = stacked.std(axis=0, ddof=1) / math.sqrt(stacked.shape[0])
    return mean, stderr


def summarize(traces: dict[int, RegretTrace]) -> dict:
    """Final-regret statistics and the log-log slope over the last half."""
    ordered = [traces[s] for s in sorted(traces)]
    finals = np.array([t.cum_regret[-1] for t in ordered])
    mean, stderr = mean_stderr(finals)
    curve = np.mean([t.cum_regret for t in ordered], axis=0)
    horizon = len(curve)
    lo = max(horizon // 2, 1)
    ts = np.arange(1, horizon + 1)[lo:]
    ys = np.maximum(curve[lo:], 1e-12)
    slope = float(np.polyfit(np.log(ts), np.log(ys), 1)[0]) if len(ts) >= 2 else 0.0
    return {
        "replicas": len(ordered),
        "final_cum_regret_mean": mean,
        "final_cum_regret_stderr": stderr,
        "log_slope_last_half": slope,
    }
