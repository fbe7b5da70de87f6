"""Distance-from-stability metrics for market outcomes.

The TU metric is the maximum, over agent subsets, of the gap between the best
matching on the subset and the subset's realized payoff. It equals both the
minimum total subsidy that restores stability and the maximum unhappiness of
any coalition; all three are computed here, along with brute-force oracles
and the NTU variant (minimum subsidies under disjunctive no-blocking
constraints).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import TooLarge
from .market import (
    TOL,
    AgentId,
    Matching,
    MarketOutcome,
    UtilityMatrix,
    assignment_with_duals,
    customer,
    provider,
)

_BRUTE_FORCE_MAX_AGENTS = 12
_NTU_EXACT_MAX_CUSTOMERS = 8
_NTU_BRUTE_MAX_SIDE = 6


@dataclass(frozen=True)
class InstabilityReport:
    """Value of the instability metric together with all three witnesses."""

    value: float
    witness_subset: frozenset[AgentId]
    subsidies_customers: np.ndarray
    subsidies_providers: np.ndarray
    blocking_pairs: frozenset[tuple[int, int]]
    ir_violations: frozenset[AgentId]

    def subsidy_total(self) -> float:
        return float(self.subsidies_customers.sum() + self.subsidies_providers.sum())


@dataclass(frozen=True)
class NtuInstabilityReport:
    value: float
    subsidies_customers: np.ndarray
    subsidies_providers: np.ndarray


def _blocking_gains(u: UtilityMatrix, outcome: MarketOutcome) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Net payoffs q and the pair gain matrix g_ij = joint(i,j) - q_i - q_j."""
    q_c, q_p = outcome.net_payoffs(u)
    g = u.joint() - q_c[:, None] - q_p[None, :]
    return q_c, q_p, g


def _augmented_solution(q_c: np.ndarray, q_p: np.ndarray, g: np.ndarray):
    """Solve the dual matching reduction; returns (value, selected rows/cols).

    The augmented bipartite graph gives edge (i, j) the joint gain of
    re-matching the pair and each agent an exclusive opt-out of weight -q_a
    (worth taking only when individual rationality is violated). The metric is
    the maximum-weight matching of this graph.
    """
    n_c, n_p = g.shape
    n = n_c + n_p
    aug = np.full((n, n), -np.inf)
    aug[:n_c, :n_p] = g
    aug[n_c:, n_p:] = 0.0
    idx_c = np.arange(n_c)
    idx_p = np.arange(n_p)
    aug[idx_c, n_p + idx_c] = np.maximum(0.0, -q_c)
    aug[n_c + idx_p, idx_p] = np.maximum(0.0, -q_p)
    rows, cols = linear_sum_assignment(aug, maximize=True)
    value = max(0.0, float(aug[rows, cols].sum()))
    return value, rows, cols


def subset_instability_value(u: UtilityMatrix, outcome: MarketOutcome) -> float:
    """Value-only fast path of :func:`subset_instability`."""
    outcome.check_zero_sum()
    q_c, q_p, g = _blocking_gains(u, outcome)
    value, _, _ = _augmented_solution(q_c, q_p, g)
    return value


def subset_instability(u: UtilityMatrix, outcome: MarketOutcome) -> InstabilityReport:
    """Exact instability of a zero-sum outcome, via the dual matching reduction.

    The value is the maximum-weight matching of the augmented gain graph; the
    dual prices of the same program are the optimal stabilizing subsidies, and
    the selected edges/opt-outs are the blocking structure and witness subset.
    """
    outcome.check_zero_sum()
    n_c, n_p = u.num_customers, u.num_providers
    q_c, q_p, g = _blocking_gains(u, outcome)
    value, rows, cols = _augmented_solution(q_c, q_p, g)

    blocking: set[tuple[int, int]] = set()
    ir: set[AgentId] = set()
    for r, c in zip(rows, cols):
        if r < n_c and c < n_p and g[r, c] > TOL:
            blocking.add((int(r), int(c)))
        elif r < n_c and c == n_p + r and -q_c[r] > TOL:
            ir.add(customer(int(r)))
        elif r >= n_c and c == r - n_c and -q_p[c] > TOL:
            ir.add(provider(int(c)))

    witness: set[AgentId] = set(ir)
    for i, j in blocking:
        witness.add(customer(i))
        witness.add(provider(j))

    s_c, s_p = _optimal_subsidies(q_c, q_p, g)
    return InstabilityReport(
        value=value,
        witness_subset=frozenset(witness),
        subsidies_customers=s_c,
        subsidies_providers=s_p,
        blocking_pairs=frozenset(blocking),
        ir_violations=frozenset(ir),
    )


def _optimal_subsidies(q_c: np.ndarray, q_p: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Optimal subsidy vector: IR floors plus duals of the reduced gain problem.

    Every feasible subsidy satisfies s_a >= max(0, -q_a); writing s = floor + t
    reduces the program to the assignment dual on g minus the floors, whose
    dual prices we already know how to extract. A final repair pass lifts any
    float dust left by the solver.
    """
    floor_c = np.maximum(0.0, -q_c)
    floor_p = np.maximum(0.0, -q_p)
    reduced = g - floor_c[:, None] - floor_p[None, :]
    _, t_c, t_p = assignment_with_duals(reduced)
    s_c = floor_c + t_c
    s_p = floor_p + t_p
    for _ in range(4):
        deficit = g - s_c[:, None] - s_p[None, :]
        worst = deficit.max() if deficit.size else 0.0
        if worst <= 1e-12:
            break
        s_c += np.maximum(deficit.max(axis=1), 0.0)
    return s_c, s_p


def min_stabilizing_subsidy(u: UtilityMatrix, outcome: MarketOutcome) -> tuple[float, np.ndarray, np.ndarray]:
    """Minimum total subsidy making the outcome stable, with a per-agent witness."""
    report = subset_instability(u, outcome)
    return report.subsidy_total(), report.subsidies_customers, report.subsidies_providers


def max_unhappiness_coalition(u: UtilityMatrix, outcome: MarketOutcome) -> tuple[float, frozenset[AgentId]]:
    """Largest joint gain a coalition can secure without hurting any member."""
    report = subset_instability(u, outcome)
    return report.value, report.witness_subset


def coalition_deviation(u: UtilityMatrix, outcome: MarketOutcome) -> tuple[Matching, np.ndarray, np.ndarray]:
    """An internal re-matching with zero-sum transfers certifying the coalition.

    Each re-matched pair splits its gain evenly, so both members weakly
    improve; opted-out agents go unmatched at transfer zero.
    """
    report = subset_instability(u, outcome)
    q_c, q_p, g = _blocking_gains(u, outcome)
    tau_c = np.zeros(u.num_customers)
    tau_p = np.zeros(u.num_providers)
    for i, j in report.blocking_pairs:
        tau_c[i] = q_c[i] + g[i, j] / 2.0 - u.customer_values[i, j]
        tau_p[j] = q_p[j] + g[i, j] / 2.0 - u.provider_values[j, i]
    return Matching(report.blocking_pairs), tau_c, tau_p


def utility_difference(u: UtilityMatrix, outcome: MarketOutcome) -> float:
    """Total utility of the best matching minus that of the outcome's matching."""
    pairs, _, _ = assignment_with_duals(u.joint())
    best = Matching(pairs).total_utility(u)
    return best - outcome.matching.total_utility(u)


def subset_instability_bruteforce(u: UtilityMatrix, outcome: MarketOutcome) -> float:
    """Literal subset-maximization oracle; exponential, guarded at 12 agents.

    Enumerates every subset of agents and evaluates the best matching on it by
    dynamic programming over provider bitmasks, independent of the dual
    reduction used by :func:`subset_instability`.
    """
    n_c, n_p = u.num_customers, u.num_providers
    if n_c + n_p > _BRUTE_FORCE_MAX_AGENTS:
        raise TooLarge(f"brute force is limited to {_BRUTE_FORCE_MAX_AGENTS} agents")
    outcome.check_zero_sum()
    q_c, q_p = outcome.net_payoffs(u)
    joint = u.joint()

    best = 0.0
    for c_mask in range(1 << n_c):
        members = [i for i in range(n_c) if c_mask >> i & 1]
        # table[p_mask] = best matching weight using customers `members`
        # and providers within p_mask; built one customer at a time.
        table = [0.0] * (1 << n_p)
        for i in members:
            new = table[:]
            for p_mask in range(1 << n_p):
                base = table[p_mask]
                for j in range(n_p):
                    if p_mask >> j & 1 and joint[i, j] > 0:
                        cand = table[p_mask & ~(1 << j)] + joint[i, j]
                        if cand > base:
                            base = cand
                new[p_mask] = base
            table = new
        payoff_c = sum(q_c[i] for i in members)
        for p_mask in range(1 << n_p):
            payoff = payoff_c + sum(q_p[j] for j in range(n_p) if p_mask >> j & 1)
            gap = table[p_mask] - payoff
            if gap > best:
                best = gap
    return best


def _ntu_match_values(u: UtilityMatrix, matching: Matching) -> tuple[np.ndarray, np.ndarray]:
    mu_c = np.zeros(u.num_customers)
    mu_p = np.zeros(u.num_providers)
    for i, j in matching.pairs:
        mu_c[i] = u.customer_values[i, j]
        mu_p[j] = u.provider_values[j, i]
    return mu_c, mu_p


def _ntu_candidates(gain_c: np.ndarray, ir_c: np.ndarray) -> list[np.ndarray]:
    """Per-customer candidate subsidy levels: thresholds where constraints flip."""
    out = []
    for i in range(gain_c.shape[0]):
        vals = {0.0, float(ir_c[i])}
        vals.update(max(0.0, float(v)) for v in gain_c[i])
        cands = sorted(v for v in vals if v >= ir_c[i] - 1e-15)
        out.append(np.array(cands))
    return out


def _ntu_forced_providers(s_c: np.ndarray, gain_c: np.ndarray, gain_p: np.ndarray, ir_p: np.ndarray) -> np.ndarray:
    """Cheapest provider subsidies once customer subsidies are fixed."""
    uncovered = gain_c - s_c[:, None] > TOL
    s_p = ir_p.copy()
    if uncovered.any():
        need = np.where(uncovered, gain_p, -np.inf).max(axis=0)
        s_p = np.maximum(s_p, np.maximum(need, 0.0))
    return s_p


def ntu_subset_instability(u: UtilityMatrix, matching: Matching) -> NtuInstabilityReport:
    """Exact NTU instability by branch-and-bound over customer subsidy levels.

    The disjunctive no-blocking constraint means each blocking pair is silenced
    on the customer side or the provider side; optimal customer subsidies lie
    in a finite threshold set, and provider subsidies are then forced.
    """
    n_c, n_p = u.num_customers, u.num_providers
    if n_c > _NTU_EXACT_MAX_CUSTOMERS:
        raise TooLarge(f"exact NTU solver is limited to {_NTU_EXACT_MAX_CUSTOMERS} customers")
    mu_c, mu_p = _ntu_match_values(u, matching)
    ir_c = np.maximum(0.0, -mu_c)
    ir_p = np.maximum(0.0, -mu_p)
    gain_c = u.customer_values - mu_c[:, None]
    gain_p = u.provider_values.T - mu_p[None, :]

    if n_p == 0 or n_c == 0:
        return NtuInstabilityReport(float(ir_c.sum() + ir_p.sum()), ir_c, ir_p)

    candidates = _ntu_candidates(gain_c, ir_c)
    min_rest = np.array([min(c) if c.size else 0.0 for c in candidates])
    tail_min = np.concatenate([np.cumsum(min_rest[::-1])[::-1], [0.0]])
    provider_floor = float(ir_p.sum())

    best_total = np.inf
    best_sc = ir_c.copy()
    stack_sc = np.zeros(n_c)

    def dfs(i: int, partial: float) -> None:
        nonlocal best_total, best_sc
        if partial + tail_min[i] + provider_floor >= best_total - 1e-15:
            return
        if i == n_c:
            s_p = _ntu_forced_providers(stack_sc, gain_c, gain_p, ir_p)
            total = partial + float(s_p.sum())
            if total < best_total - 1e-15:
                best_total = total
                best_sc = stack_sc.copy()
            return
        for v in candidates[i]:
            stack_sc[i] = v
            dfs(i + 1, partial + float(v))

    dfs(0, 0.0)
    s_c = best_sc
    s_p = _ntu_forced_providers(s_c, gain_c, gain_p, ir_p)
    return NtuInstabilityReport(float(s_c.sum() + s_p.sum()), s_c, s_p)


def ntu_subset_instability_bruteforce(u: UtilityMatrix, matching: Matching) -> float:
    """Exhaustive candidate-grid oracle for the NTU metric (no pruning).

    Enumerates the full product of customer candidate levels, derives provider
    subsidies, and verifies feasibility of every evaluated vector explicitly.
    """
    n_c, n_p = u.num_customers, u.num_providers
    if n_c > _NTU_BRUTE_MAX_SIDE or n_p > _NTU_BRUTE_MAX_SIDE:
        raise TooLarge(f"NTU oracle is limited to {_NTU_BRUTE_MAX_SIDE} agents per side")
    mu_c, mu_p = _ntu_match_values(u, matching)
    ir_c = np.maximum(0.0, -mu_c)
    ir_p = np.maximum(0.0, -mu_p)
    gain_c = u.customer_values - mu_c[:, None]
    gain_p = u.provider_values.T - mu_p[None, :]

    if n_p == 0 or n_c == 0:
        return float(ir_c.sum() + ir_p.sum())

    best = np.inf
    for combo in itertools.product(*_ntu_candidates(gain_c, ir_c)):
        s_c = np.array(combo)
        s_p = _ntu_forced_providers(s_c, gain_c, gain_p, ir_p)
        covered = np.minimum(gain_c - s_c[:, None], gain_p - s_p[None, :]) <= TOL
        feasible = (
            covered.all()
            and (mu_c + s_c >= -TOL).all()
            and (mu_p + s_p >= -TOL).all()
            and (s_c >= -TOL).all()
            and (s_p >= -TOL).all()
        )
        if feasible:
            best = min(best, float(s_c.sum() + s_p.sum()))
    return best


def ntu_instability_upper_bound(conf, matching: Matching) -> float:
    """Certified bound: total confidence width over matched agents.

    Valid whenever the matching is stable for the upper-confidence utilities
    and the sets contain the truth; subsidizing every matched agent up to its
    upper bound silences all blocking pairs.
    """
    return conf.width_sum(matching)
