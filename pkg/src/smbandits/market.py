"""Two-sided markets with transferable utilities.

Agents live on two sides (customers and providers). A matching pairs agents
across sides; a market outcome adds per-agent monetary transfers. The central
solver returns a maximum-weight matching together with supporting dual prices,
which is exactly the primal-dual pair that characterizes stable outcomes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidOutcome, NoAlternative

TOL = 1e-9

_FORBIDDEN = -np.inf


class Side(enum.Enum):
    CUSTOMER = "customer"
    PROVIDER = "provider"


@dataclass(frozen=True)
class AgentId:
    side: Side
    index: int

    def sort_key(self) -> tuple[str, int]:
        return (self.side.value, self.index)

    def __repr__(self) -> str:
        return f"{'C' if self.side is Side.CUSTOMER else 'P'}{self.index}"


def customer(i: int) -> AgentId:
    return AgentId(Side.CUSTOMER, i)


def provider(j: int) -> AgentId:
    return AgentId(Side.PROVIDER, j)


@dataclass(frozen=True)
class UtilityMatrix:
    """Global utility function over ordered cross-side pairs.

    ``customer_values[i, j]`` is the utility customer ``i`` derives from being
    matched to provider ``j``; ``provider_values[j, i]`` is the reverse
    direction. Unmatched utility is implicitly zero. The bandit environment
    keeps entries in [-1, 1]; the scoring code accepts arbitrary scales.
    """

    customer_values: np.ndarray
    provider_values: np.ndarray

    def __post_init__(self) -> None:
        cv = np.asarray(self.customer_values, dtype=float)
        pv = np.asarray(self.provider_values, dtype=float)
        if cv.ndim != 2 or pv.ndim != 2 or cv.shape != pv.shape[::-1]:
            raise ValueError(f"inconsistent utility shapes {cv.shape} / {pv.shape}")
        if not (np.all(np.isfinite(cv)) and np.all(np.isfinite(pv))):
            raise ValueError("utilities must be finite")
        object.__setattr__(self, "customer_values", cv)
        object.__setattr__(self, "provider_values", pv)

    @property
    def num_customers(self) -> int:
        return self.customer_values.shape[0]

    @property
    def num_providers(self) -> int:
        return self.customer_values.shape[1]

    @property
    def num_agents(self) -> int:
        return self.num_customers + self.num_providers

    def joint(self) -> np.ndarray:
        """Joint pair weights u_i(j) + u_j(i), shape (customers, providers)."""
        return self.customer_values + self.provider_values.T

    def restrict(self, customers: np.ndarray, providers: np.ndarray) -> UtilityMatrix:
        """Submarket on the given (sorted) index arrays."""
        if len(customers) == self.num_customers and len(providers) == self.num_providers:
            return self
        return UtilityMatrix(
            self.customer_values[np.ix_(customers, providers)],
            self.provider_values[np.ix_(providers, customers)],
        )

    def scaled(self, factor: float) -> UtilityMatrix:
        return UtilityMatrix(self.customer_values * factor, self.provider_values * factor)


@dataclass(frozen=True)
class Matching:
    """A set of pairwise-disjoint (customer, provider) index pairs."""

    pairs: tuple[tuple[int, int], ...]

    def __init__(self, pairs=()) -> None:
        normalized = tuple(sorted((int(i), int(j)) for i, j in pairs))
        customers = [i for i, _ in normalized]
        providers = [j for _, j in normalized]
        if len(set(customers)) != len(customers) or len(set(providers)) != len(providers):
            raise ValueError("matching pairs are not disjoint")
        object.__setattr__(self, "pairs", normalized)

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def provider_of(self) -> dict[int, int]:
        return dict(self.pairs)

    def customer_of(self) -> dict[int, int]:
        return {j: i for i, j in self.pairs}

    def matched_agents(self) -> list[AgentId]:
        out: list[AgentId] = []
        for i, j in self.pairs:
            out.append(customer(i))
            out.append(provider(j))
        return out

    def total_utility(self, u: UtilityMatrix) -> float:
        return float(sum(u.joint()[i, j] for i, j in self.pairs))


@dataclass(frozen=True)
class DualPrices:
    """Per-agent nonnegative prices feasible for the assignment dual."""

    customers: np.ndarray
    providers: np.ndarray

    def total(self) -> float:
        return float(self.customers.sum() + self.providers.sum())

    def of(self, agent: AgentId) -> float:
        arr = self.customers if agent.side is Side.CUSTOMER else self.providers
        return float(arr[agent.index])


@dataclass(frozen=True)
class MarketOutcome:
    """A matching plus per-agent transfers (zero-sum in TU mode, zero in NTU)."""

    matching: Matching
    customer_transfers: np.ndarray
    provider_transfers: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "customer_transfers", np.asarray(self.customer_transfers, dtype=float))
        object.__setattr__(self, "provider_transfers", np.asarray(self.provider_transfers, dtype=float))

    @classmethod
    def ntu(cls, matching: Matching, num_customers: int, num_providers: int) -> MarketOutcome:
        return cls(matching, np.zeros(num_customers), np.zeros(num_providers))

    def net_payoffs(self, u: UtilityMatrix) -> tuple[np.ndarray, np.ndarray]:
        """Per-agent match utility plus transfer (zero for unmatched agents)."""
        q_c = self.customer_transfers.copy()
        q_p = self.provider_transfers.copy()
        for i, j in self.matching.pairs:
            q_c[i] += u.customer_values[i, j]
            q_p[j] += u.provider_values[j, i]
        return q_c, q_p

    def check_zero_sum(self, tol: float = TOL) -> None:
        matched_c = {i for i, _ in self.matching.pairs}
        matched_p = {j for _, j in self.matching.pairs}
        for i, j in self.matching.pairs:
            if abs(self.customer_transfers[i] + self.provider_transfers[j]) > tol:
                raise InvalidOutcome(f"transfers of pair ({i},{j}) are not zero-sum")
        for i, tau in enumerate(self.customer_transfers):
            if i not in matched_c and abs(tau) > tol:
                raise InvalidOutcome(f"unmatched customer {i} has nonzero transfer")
        for j, tau in enumerate(self.provider_transfers):
            if j not in matched_p and abs(tau) > tol:
                raise InvalidOutcome(f"unmatched provider {j} has nonzero transfer")


def assignment_pairs(joint: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-weight bipartite matching; agents may stay unmatched at zero.

    Edges with weight <= 0 are never used.
    """
    n_c, n_p = joint.shape
    if n_c == 0 or n_p == 0:
        return []
    w = np.maximum(joint, 0.0)
    n = max(n_c, n_p)
    padded = np.zeros((n, n))
    padded[:n_c, :n_p] = w
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return [
        (int(i), int(j))
        for i, j in zip(rows, cols)
        if i < n_c and j < n_p and joint[i, j] > 0.0
    ]


def assignment_with_duals(joint: np.ndarray) -> tuple[list[tuple[int, int]], np.ndarray, np.ndarray]:
    """Maximum-weight bipartite matching with dual prices.

    ``joint[i, j]`` is the weight of matching customer ``i`` with provider
    ``j``; agents may stay unmatched at weight zero, so edges with weight <= 0
    are never used. Returns the matched pairs and per-side dual prices ``p``
    with ``p >= 0``, ``p_i + p_j >= max(joint[i, j], 0)`` for all pairs,
    equality on matched pairs, and ``p = 0`` on unmatched agents.
    """
    n_c, n_p = joint.shape
    pairs = assignment_pairs(joint)
    if not pairs:
        return [], np.zeros(n_c), np.zeros(n_p)
    p_c, p_p = _duals_for_matching(np.maximum(joint, 0.0), pairs)
    return pairs, p_c, p_p


def _duals_for_matching(w: np.ndarray, pairs: list[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    """Dual prices supporting an optimal matching, via difference constraints.

    Unmatched agents are pinned at zero (complementary slackness). For matched
    pair k the customer price x_k determines the provider price w_k - x_k, and
    feasibility against all other edges becomes a shortest-path problem. The
    system is feasible exactly when ``pairs`` is optimal for ``w``.
    """
    n_c, n_p = w.shape
    p_c = np.zeros(n_c)
    p_p = np.zeros(n_p)
    if not pairs:
        return p_c, p_p

    ci = np.array([i for i, _ in pairs])
    pj = np.array([j for _, j in pairs])
    wk = w[ci, pj]
    free_p = np.ones(n_p, dtype=bool)
    free_p[pj] = False
    free_c = np.ones(n_c, dtype=bool)
    free_c[ci] = False

    # Box bounds: L_k <= x_k <= U_k.
    lower = np.zeros(len(pairs))
    if free_p.any():
        lower = np.maximum(lower, w[ci][:, free_p].max(axis=1))
    upper = wk.copy()
    if free_c.any():
        upper = np.minimum(upper, wk - w[free_c][:, pj].max(axis=0))

    # Cross constraints x_k - x_l >= w[i_k, j_l] - w_l become edges k -> l of
    # weight -(w[i_k, j_l] - w_l) in a shortest-path relaxation from x = U.
    edge = -(w[ci][:, pj] - wk[None, :])
    np.fill_diagonal(edge, np.inf)
    x = upper.copy()
    for _ in range(len(pairs)):
        new_x = np.minimum(x, np.min(x[:, None] + edge, axis=0))
        if (new_x == x).all():
            break
        x = new_x
    x = np.clip(x, lower, upper)

    p_c[ci] = np.maximum(x, 0.0)
    p_p[pj] = np.maximum(wk - x, 0.0)
    return p_c, p_p


def max_weight_matching_with_duals(u: UtilityMatrix) -> tuple[Matching, DualPrices]:
    """Maximum-weight matching and dual prices for the market ``u``.

    The duals are feasible for the assignment dual (prices), complementary
    slack with the returned matching, and sum to its weight.
    """
    pairs, p_c, p_p = assignment_with_duals(u.joint())
    return Matching(pairs), DualPrices(p_c, p_p)


def stable_outcome_from_duals(u: UtilityMatrix, matching: Matching, prices: DualPrices) -> MarketOutcome:
    """Transfers tau_a = p_a - u_a(mu(a)); stable whenever (matching, prices) is optimal."""
    tau_c = prices.customers.copy()
    tau_p = prices.providers.copy()
    for i, j in matching.pairs:
        tau_c[i] -= u.customer_values[i, j]
        tau_p[j] -= u.provider_values[j, i]
    return MarketOutcome(matching, tau_c, tau_p)


def second_best_matching(u: UtilityMatrix, best: Matching) -> tuple[Matching, float]:
    """Maximum-weight matching over all matchings different from ``best``.

    Candidates: for each edge of ``best``, the optimum with that edge
    forbidden; for each cross edge outside ``best``, the optimum with that
    edge forced. Raises NoAlternative when no other matching exists.
    """
    n_c, n_p = u.num_customers, u.num_providers
    if n_c == 0 or n_p == 0:
        raise NoAlternative("market admits only the empty matching")

    joint = u.joint()
    best_pairs = set(best.pairs)
    candidates: list[tuple[float, Matching]] = []

    for edge in best.pairs:
        modified = joint.copy()
        modified[edge] = _FORBIDDEN
        m = Matching(assignment_pairs(modified))
        candidates.append((m.total_utility(u), m))

    all_c = np.arange(n_c)
    all_p = np.arange(n_p)
    for i in range(n_c):
        rest_c = np.delete(all_c, i)
        for j in range(n_p):
            if (i, j) in best_pairs:
                continue
            rest_p = np.delete(all_p, j)
            sub = joint[np.ix_(rest_c, rest_p)]
            lifted = [(int(rest_c[a]), int(rest_p[b])) for a, b in assignment_pairs(sub)]
            m = Matching(lifted + [(i, j)])
            candidates.append((m.total_utility(u), m))

    if not candidates:
        raise NoAlternative("no matching other than the given one exists")
    weight, match = max(candidates, key=lambda t: t[0])
    return match, float(weight)


def stability_inequalities_hold(u: UtilityMatrix, outcome: MarketOutcome, eps: float = 0.0) -> bool:
    """IR and no-blocking inequalities with slack eps / 2*eps, transfers as-is.

    Does not require zero-sum transfers; this is the eps-stability notion of
    the search-frictions setting, where fees make transfers non-zero-sum.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    q_c, q_p = outcome.net_payoffs(u)
    if q_c.size and q_c.min() < -eps - TOL:
        return False
    if q_p.size and q_p.min() < -eps - TOL:
        return False
    if q_c.size and q_p.size:
        slack = q_c[:, None] + q_p[None, :] - u.joint() + 2.0 * eps
        if slack.min() < -TOL:
            return False
    return True


def is_stable_tu(u: UtilityMatrix, outcome: MarketOutcome, eps: float = 0.0) -> bool:
    """Stability with transfers: individual rationality and no blocking pairs.

    ``eps > 0`` gives the search-frictions relaxation: the IR constraints are
    slackened by eps and the blocking constraints by 2*eps. Transfers must be
    zero-sum (InvalidOutcome otherwise).
    """
    outcome.check_zero_sum()
    return stability_inequalities_hold(u, outcome, eps)


def is_stable_ntu(u: UtilityMatrix, matching: Matching) -> bool:
    """Stability without transfers: IR plus no pair where both strictly gain."""
    mu_c = np.zeros(u.num_customers)
    mu_p = np.zeros(u.num_providers)
    for i, j in matching.pairs:
        mu_c[i] = u.customer_values[i, j]
        mu_p[j] = u.provider_values[j, i]
    if (mu_c.size and mu_c.min() < -TOL) or (mu_p.size and mu_p.min() < -TOL):
        return False
    if u.num_customers and u.num_providers:
        gain_c = u.customer_values - mu_c[:, None]
        gain_p = u.provider_values.T - mu_p[None, :]
        if np.minimum(gain_c, gain_p).max() > TOL:
            return False
    return True
