"""Round-level matching policies driven by confidence sets.

``compute_match`` solves the optimistic primal-dual pair and reads transfers
off the dual prices; ``compute_match_prime`` adds the gap-aware dual lift and
the expanded-set cross-check needed for instance-dependent guarantees;
``compute_match_ntu`` runs customer-proposing deferred acceptance on the upper
confidence bounds. The policy classes wrap these into bandit loops with
semi-bandit feedback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .confidence import ConfidenceSets, Mode
from .errors import NoAlternative
from .market import (
    TOL,
    AgentId,
    Matching,
    MarketOutcome,
    UtilityMatrix,
    assignment_pairs,
    assignment_with_duals,
    second_best_matching,
)

Arrivals = tuple[np.ndarray, np.ndarray]  # (customer indices, provider indices)


def all_arrivals(num_customers: int, num_providers: int) -> Arrivals:
    return np.arange(num_customers), np.arange(num_providers)


def _lift_pairs(pairs, cust: np.ndarray, prov: np.ndarray) -> list[tuple[int, int]]:
    return [(int(cust[i]), int(prov[j])) for i, j in pairs]


def _outcome_from_duals(
    ucb: UtilityMatrix,
    pairs_local,
    p_c: np.ndarray,
    p_p: np.ndarray,
    cust: np.ndarray,
    prov: np.ndarray,
    n_c: int,
    n_p: int,
) -> MarketOutcome:
    """Global-index outcome with transfers tau_a = p_a - ucb_a(mu(a))."""
    tau_c = np.zeros(n_c)
    tau_p = np.zeros(n_p)
    for (li, lj) in pairs_local:
        gi, gj = int(cust[li]), int(prov[lj])
        tau_c[gi] = p_c[li] - ucb.customer_values[li, lj]
        tau_p[gj] = p_p[lj] - ucb.provider_values[lj, li]
    return MarketOutcome(Matching(_lift_pairs(pairs_local, cust, prov)), tau_c, tau_p)


def compute_match(conf: ConfidenceSets, arrivals: Arrivals) -> MarketOutcome:
    """Stable-for-the-upper-bounds outcome on this round's arrivals."""
    cust, prov = arrivals
    ucb_full = conf.ucb_matrix()
    sub = ucb_full.restrict(cust, prov)
    pairs, p_c, p_p = assignment_with_duals(sub.joint())
    return _outcome_from_duals(sub, pairs, p_c, p_p, cust, prov, conf.num_customers, conf.num_providers)


def expanded_upper_bounds(conf: ConfidenceSets) -> UtilityMatrix:
    """Upper bounds of the doubled-width sets C' (not clipped to [-1, 1])."""
    hi_c = conf.hi_c + (conf.hi_c - conf.lo_c) / 2.0
    hi_p = conf.hi_p + (conf.hi_p - conf.lo_p) / 2.0
    return UtilityMatrix(hi_c, hi_p)


def compute_match_prime(conf: ConfidenceSets, arrivals: Arrivals) -> tuple[MarketOutcome, dict]:
    """Gap-aware variant selecting robust dual prices.

    On the original upper bounds it computes the best matching, the gap to the
    second-best matching, and duals for a perturbed utility that shaves
    gap/|A| off every matched edge endpoint; adding gap/|A| back to the duals
    yields an optimal-but-robust primal-dual pair. A second pair is computed
    on the doubled-width sets; when the two matchings disagree, the
    doubled-set outcome is played. A zero gap falls back to compute_match.
    """
    cust, prov = arrivals
    n_c, n_p = conf.num_customers, conf.num_providers
    n_arrived = len(cust) + len(prov)
    ucb = conf.ucb_matrix().restrict(cust, prov)

    if len(cust) == 0 or len(prov) == 0:
        return compute_match(conf, arrivals), {"branch": "fallback", "gap": 0.0}

    x_star = Matching(assignment_pairs(ucb.joint()))
    try:
        _, second_weight = second_best_matching(ucb, x_star)
    except NoAlternative:
        return compute_match(conf, arrivals), {"branch": "fallback", "gap": 0.0}
    gap = x_star.total_utility(ucb) - second_weight
    if gap <= TOL:
        return compute_match(conf, arrivals), {"branch": "fallback", "gap": 0.0}

    # Perturbed utilities: matched-edge entries reduced by gap/|A| per side.
    shave = gap / n_arrived
    u_prime_c = ucb.customer_values.copy()
    u_prime_p = ucb.provider_values.copy()
    for i, j in x_star.pairs:
        u_prime_c[i, j] -= shave
        u_prime_p[j, i] -= shave
    u_prime = UtilityMatrix(u_prime_c, u_prime_p)
    _, pp_c, pp_p = assignment_with_duals(u_prime.joint())
    p_c = pp_c.copy()
    p_p = pp_p.copy()
    for i, j in x_star.pairs:
        p_c[i] += shave
        p_p[j] += shave

    ucb2 = expanded_upper_bounds(conf).restrict(cust, prov)
    pairs2, p2_c, p2_p = assignment_with_duals(ucb2.joint())

    if set(pairs2) != set(x_star.pairs):
        outcome = _outcome_from_duals(ucb2, pairs2, p2_c, p2_p, cust, prov, n_c, n_p)
        return outcome, {"branch": "expanded", "gap": gap}
    outcome = _outcome_from_duals(ucb, x_star.pairs, p_c, p_p, cust, prov, n_c, n_p)
    return outcome, {"branch": "robust", "gap": gap}


def compute_match_ntu(conf: ConfidenceSets, arrivals: Arrivals) -> Matching:
    """Customer-proposing deferred acceptance on the upper confidence bounds.

    Customers propose in decreasing optimistic value, skipping partners with
    negative value; providers hold the best individually-rational proposer.
    Proposal-order ties break toward the lower provider index.
    """
    cust, prov = arrivals
    ucb = conf.ucb_matrix()
    u_c = ucb.customer_values[np.ix_(cust, prov)]
    u_p = ucb.provider_values[np.ix_(prov, cust)]
    n_c, n_p = len(cust), len(prov)

    pref_lists = []
    for i in range(n_c):
        order = sorted(range(n_p), key=lambda j: (-u_c[i, j], j))
        pref_lists.append([j for j in order if u_c[i, j] >= 0.0])
    next_choice = [0] * n_c
    holder: dict[int, int] = {}
    free = list(range(n_c))
    while free:
        i = free.pop(0)
        while next_choice[i] < len(pref_lists[i]):
            j = pref_lists[i][next_choice[i]]
            next_choice[i] += 1
            if u_p[j, i] < 0.0:
                continue
            current = holder.get(j)
            if current is None:
                holder[j] = i
                break
            if u_p[j, i] > u_p[j, current]:
                holder[j] = i
                free.insert(0, current)
                break
        # Exhausted list: customer stays unmatched.
    return Matching([(int(cust[i]), int(prov[j])) for j, i in holder.items()])


@dataclass
class RoundDecision:
    """One round's outcome plus diagnostics.

    ``certified_instability_bound`` is the confidence-width certificate; it is
    valid whenever the sets contain the truth. ``scored_outcome`` is the
    zero-sum outcome to score regret against (differs from ``outcome`` only
    for the revenue policy, whose published transfers include fees).
    """

    outcome: MarketOutcome
    width_sum: float
    certified_instability_bound: float
    revenue: float
    scored_outcome: MarketOutcome = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.scored_outcome is None:
            self.scored_outcome = self.outcome


class Policy:
    """Base bandit policy: select an outcome, consume feedback, update sets."""

    kind = "base"
    compatible_modes: tuple[Mode, ...] = (Mode.UNSTRUCTURED, Mode.TYPED, Mode.LINEAR)

    def __init__(self, conf: ConfidenceSets, horizon: int) -> None:
        if conf.mode not in self.compatible_modes:
            raise ValueError(f"{self.kind} is incompatible with {conf.mode.value} confidence sets")
        self.conf = conf
        self.horizon = horizon
        self.round_index = 0

    def step(self, arrivals: Arrivals, feedback) -> RoundDecision:
        self.round_index += 1
        decision = self._select(arrivals)
        observations = feedback(decision.outcome.matching)
        self._learn(decision.outcome.matching, observations)
        return decision

    def _select(self, arrivals: Arrivals) -> RoundDecision:
        raise NotImplementedError

    def _learn(self, matching: Matching, observations: dict[AgentId, float]) -> None:
        self.conf.update(matching, observations, self.horizon)


class MatchUcbPolicy(Policy):
    """Optimistic primal-dual matching; the unstructured/typed/linear loops
    differ only in the confidence sets they carry."""

    kind = "match_ucb"

    def _select(self, arrivals: Arrivals) -> RoundDecision:
        outcome = compute_match(self.conf, arrivals)
        w = self.conf.width_sum(outcome.matching)
        return RoundDecision(outcome, w, w, 0.0)


class MatchUcbPrimePolicy(Policy):
    kind = "match_ucb_prime"
    compatible_modes = (Mode.UNSTRUCTURED,)

    def _select(self, arrivals: Arrivals) -> RoundDecision:
        outcome, info = compute_match_prime(self.conf, arrivals)
        w = self.conf.width_sum(outcome.matching)
        bound = 2.0 * w if info["branch"] == "expanded" else w
        return RoundDecision(outcome, w, bound, 0.0)


class MatchNtuUcbPolicy(Policy):
    kind = "match_ntu_ucb"
    compatible_modes = (Mode.UNSTRUCTURED, Mode.TYPED)

    def _select(self, arrivals: Arrivals) -> RoundDecision:
        matching = compute_match_ntu(self.conf, arrivals)
        outcome = MarketOutcome.ntu(matching, self.conf.num_customers, self.conf.num_providers)
        w = self.conf.width_sum(matching)
        return RoundDecision(outcome, w, w, 0.0)


class EtcPolicy(Policy):
    """Explore-then-commit: force each pair a fixed number of times, then play
    the optimistic outcome on frozen sets.

    Exploration packs disjoint pairs via a diagonal-offset round-robin:
    offset k matches customer i with provider (i + k) mod max(sides), so one
    full sweep of offsets visits every pair exactly once.
    """

    kind = "etc"
    compatible_modes = (Mode.UNSTRUCTURED,)

    def __init__(self, conf: ConfidenceSets, horizon: int, pulls_per_pair: int | None = None) -> None:
        super().__init__(conf, horizon)
        if pulls_per_pair is None:
            pulls_per_pair = self.default_pulls_per_pair(conf.num_agents, horizon)
        self.pulls_per_pair = pulls_per_pair
        self.explored = np.zeros((conf.num_customers, conf.num_providers), dtype=int)
        self.committed = False
        self._offset = 0

    @staticmethod
    def default_pulls_per_pair(num_agents: int, horizon: int) -> int:
        if num_agents == 0:
            return 0
        log_term = math.log(max(num_agents * horizon, 2))
        return int(math.ceil((horizon / num_agents) ** (2.0 / 3.0) * log_term ** (1.0 / 3.0)))

    def _select(self, arrivals: Arrivals) -> RoundDecision:
        if not self.committed and (self.explored >= self.pulls_per_pair).all():
            self.committed = True
        if self.committed:
            outcome = compute_match(self.conf, arrivals)
            w = self.conf.width_sum(outcome.matching)
            return RoundDecision(outcome, w, w, 0.0)

        cust, prov = arrivals
        n_p = self.conf.num_providers
        modulus = max(self.conf.num_customers, n_p, 1)
        pset = set(prov.tolist())
        pairs = []
        for i in cust.tolist():
            j = (i + self._offset) % modulus
            if j < n_p and j in pset and self.explored[i, j] < self.pulls_per_pair:
                pairs.append((i, j))
                self.explored[i, j] += 1
        self._offset = (self._offset + 1) % modulus
        matching = Matching(pairs)
        outcome = MarketOutcome(
            matching, np.zeros(self.conf.num_customers), np.zeros(self.conf.num_providers)
        )
        w = self.conf.width_sum(matching)
        return RoundDecision(outcome, w, w, 0.0)

    def _learn(self, matching: Matching, observations: dict[AgentId, float]) -> None:
        if not self.committed:
            super()._learn(matching, observations)
        # Committed phase keeps the sets frozen; feedback is discarded.


class RevenueFrictionsPolicy(Policy):
    """Search-frictions pricing: charge each matched agent eps but refund the
    platform's current uncertainty about them. Published transfers are not
    zero-sum; regret is scored on the underlying zero-sum outcome."""

    kind = "revenue_frictions"
    compatible_modes = (Mode.UNSTRUCTURED,)

    def __init__(self, conf: ConfidenceSets, horizon: int, epsilon: float) -> None:
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        super().__init__(conf, horizon)
        self.epsilon = epsilon

    def _select(self, arrivals: Arrivals) -> RoundDecision:
        base = compute_match(self.conf, arrivals)
        tau_c = base.customer_transfers.copy()
        tau_p = base.provider_transfers.copy()
        for i, j in base.matching.pairs:
            tau_c[i] += -self.epsilon + (self.conf.hi_c[i, j] - self.conf.lo_c[i, j])
            tau_p[j] += -self.epsilon + (self.conf.hi_p[j, i] - self.conf.lo_p[j, i])
        published = MarketOutcome(base.matching, tau_c, tau_p)
        w = self.conf.width_sum(base.matching)
        revenue = -float(tau_c.sum() + tau_p.sum())
        return RoundDecision(published, w, w, revenue, scored_outcome=base)
