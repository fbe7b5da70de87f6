"""Per-pair confidence intervals for the three preference classes.

All variants expose the same surface: intervals clipped to [-1, 1] for every
ordered cross pair, an upper-confidence utility matrix, and width accounting
over matchings. The unstructured and typed variants keep running means with
half-width ``scale * sqrt(log(|A| T) / n)``; the linear variant maintains a
ridge-regression ellipsoid per agent and projects it onto each partner's
context.

A ConfidenceSets instance is mutable state owned by a single simulation
replica; updates are sequential within that replica, and independent replicas
hold independent instances.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidContext, ProtocolViolation
from .market import AgentId, Matching, Side, UtilityMatrix


class Mode(enum.Enum):
    UNSTRUCTURED = "unstructured"
    TYPED = "typed"
    LINEAR = "linear"


@dataclass(frozen=True)
class ConfidenceConfig:
    """Width constants. ``ucb_scale`` multiplies the sqrt(log(|A|T)/n)
    half-width of the unstructured/typed intervals (default 8); the
    linear-mode ellipsoid radius is
    ``beta = lin_beta_d_coeff * d * log(1 + T) + lin_beta_log_coeff * log(|A| T)``
    with ridge ``lin_ridge``. All four are tunable defaults, not sharp
    theoretical prescriptions."""

    ucb_scale: float = 8.0
    lin_beta_d_coeff: float = 4.0
    lin_beta_log_coeff: float = 8.0
    lin_ridge: float = 1.0


def _clip_interval(mean: float, hw: float) -> tuple[float, float]:
    """[mean - hw, mean + hw] intersected with [-1, 1]; degenerate means pin
    to the nearest boundary so lo <= hi always holds."""
    lo = max(-1.0, mean - hw)
    hi = min(1.0, mean + hw)
    if lo > hi:
        pinned = max(-1.0, min(1.0, mean))
        return pinned, pinned
    return lo, hi


class ConfidenceSets:
    """Common interval surface; subclasses own the update rule."""

    mode: Mode

    def __init__(self, num_customers: int, num_providers: int) -> None:
        self.num_customers = num_customers
        self.num_providers = num_providers
        self.num_agents = num_customers + num_providers
        # Interval matrices, customer-side (nI, nJ) and provider-side (nJ, nI).
        self.lo_c = np.full((num_customers, num_providers), -1.0)
        self.hi_c = np.full((num_customers, num_providers), 1.0)
        self.lo_p = np.full((num_providers, num_customers), -1.0)
        self.hi_p = np.full((num_providers, num_customers), 1.0)

    # -- updates ------------------------------------------------------------
    def update(self, matching: Matching, rewards: dict[AgentId, float], horizon: int) -> None:
        """Fold one round of semi-bandit feedback into the intervals."""
        expected = set(matching.matched_agents())
        got = set(rewards)
        if got != expected:
            raise ProtocolViolation(
                f"feedback does not match the matching: missing={expected - got}, extra={got - expected}"
            )
        self._apply(matching, rewards, horizon)

    def _apply(self, matching: Matching, rewards: dict[AgentId, float], horizon: int) -> None:
        raise NotImplementedError

    # -- projections ----------------------------------------------------------
    def ucb_matrix(self) -> UtilityMatrix:
        return UtilityMatrix(self.hi_c.copy(), self.hi_p.copy())

    def interval(self, agent: AgentId, partner: AgentId) -> tuple[float, float]:
        if agent.side is Side.CUSTOMER:
            return float(self.lo_c[agent.index, partner.index]), float(self.hi_c[agent.index, partner.index])
        return float(self.lo_p[agent.index, partner.index]), float(self.hi_p[agent.index, partner.index])

    def width(self, agent: AgentId, partner: AgentId) -> float:
        lo, hi = self.interval(agent, partner)
        return hi - lo

    def width_sum(self, matching: Matching) -> float:
        """Total width over both orientations of each matched pair."""
        total = 0.0
        for i, j in matching.pairs:
            total += self.hi_c[i, j] - self.lo_c[i, j]
            total += self.hi_p[j, i] - self.lo_p[j, i]
        return float(total)

    def contains(self, truth: UtilityMatrix, tol: float = 1e-9) -> bool:
        """Whether every interval contains the true utility (diagnostic)."""
        return bool(
            (self.lo_c - tol <= truth.customer_values).all()
            and (truth.customer_values <= self.hi_c + tol).all()
            and (self.lo_p - tol <= truth.provider_values).all()
            and (truth.provider_values <= self.hi_p + tol).all()
        )

    def snapshot(self) -> dict:
        """JSON-serializable per-pair state for checkpoints and diagnostics."""
        pairs = []
        for i in range(self.num_customers):
            for j in range(self.num_providers):
                pairs.append(
                    {
                        "side": "customer",
                        "agent": i,
                        "partner": j,
                        "lo": float(self.lo_c[i, j]),
                        "hi": float(self.hi_c[i, j]),
                        "n": self._pair_count(i, j),
                        "mean": self._pair_mean(Side.CUSTOMER, i, j),
                    }
                )
                pairs.append(
                    {
                        "side": "provider",
                        "agent": j,
                        "partner": i,
                        "lo": float(self.lo_p[j, i]),
                        "hi": float(self.hi_p[j, i]),
                        "n": self._pair_count(i, j),
                        "mean": self._pair_mean(Side.PROVIDER, j, i),
                    }
                )
        return {"mode": self.mode.value, "pairs": pairs}

    def _pair_count(self, i: int, j: int) -> int:
        raise NotImplementedError

    def _pair_mean(self, side: Side, a: int, b: int) -> float:
        raise NotImplementedError

    # -- test/diagnostic helpers ----------------------------------------------
    def collapse_to(self, truth: UtilityMatrix) -> None:
        """Degenerate all intervals to the true utilities (oracle sets)."""
        self.lo_c = truth.customer_values.copy()
        self.hi_c = truth.customer_values.copy()
        self.lo_p = truth.provider_values.copy()
        self.hi_p = truth.provider_values.copy()


class UnstructuredConfidence(ConfidenceSets):
    mode = Mode.UNSTRUCTURED

    def __init__(self, num_customers: int, num_providers: int, config: ConfidenceConfig | None = None) -> None:
        super().__init__(num_customers, num_providers)
        self.config = config or ConfidenceConfig()
        self.counts = np.zeros((num_customers, num_providers), dtype=int)
        self.mean_c = np.zeros((num_customers, num_providers))
        self.mean_p = np.zeros((num_providers, num_customers))

    def _apply(self, matching: Matching, rewards: dict[AgentId, float], horizon: int) -> None:
        log_term = math.log(max(self.num_agents * horizon, 2))
        for i, j in matching.pairs:
            n = self.counts[i, j] + 1
            self.counts[i, j] = n
            r_c = rewards[AgentId(Side.CUSTOMER, i)]
            r_p = rewards[AgentId(Side.PROVIDER, j)]
            self.mean_c[i, j] += (r_c - self.mean_c[i, j]) / n
            self.mean_p[j, i] += (r_p - self.mean_p[j, i]) / n
            hw = self.config.ucb_scale * math.sqrt(log_term / n)
            self.lo_c[i, j], self.hi_c[i, j] = _clip_interval(self.mean_c[i, j], hw)
            self.lo_p[j, i], self.hi_p[j, i] = _clip_interval(self.mean_p[j, i], hw)

    def nominal_width(self, i: int, j: int, horizon: int) -> float:
        """Pre-clip width 2 * scale * sqrt(log(|A|T)/n); monotone in pulls."""
        n = self.counts[i, j]
        if n == 0:
            return 2.0
        log_term = math.log(max(self.num_agents * horizon, 2))
        return min(2.0, 2.0 * self.config.ucb_scale * math.sqrt(log_term / n))

    def _pair_count(self, i: int, j: int) -> int:
        return int(self.counts[i, j])

    def _pair_mean(self, side: Side, a: int, b: int) -> float:
        return float(self.mean_c[a, b] if side is Side.CUSTOMER else self.mean_p[a, b])


class TypedConfidence(ConfidenceSets):
    """Intervals at type-pair granularity, pooled across both market roles.

    An observation by an agent of type x matched to type y updates the (x, y)
    cell; the reverse-orientation cell is updated by the partner's feedback.
    """

    mode = Mode.TYPED

    def __init__(
        self,
        customer_types: np.ndarray,
        provider_types: np.ndarray,
        num_types: int,
        config: ConfidenceConfig | None = None,
    ) -> None:
        super().__init__(len(customer_types), len(provider_types))
        self.config = config or ConfidenceConfig()
        self.customer_types = np.asarray(customer_types, dtype=int)
        self.provider_types = np.asarray(provider_types, dtype=int)
        self.num_types = num_types
        self.type_counts = np.zeros((num_types, num_types), dtype=int)
        self.type_mean = np.zeros((num_types, num_types))
        self.type_lo = np.full((num_types, num_types), -1.0)
        self.type_hi = np.full((num_types, num_types), 1.0)

    def _apply(self, matching: Matching, rewards: dict[AgentId, float], horizon: int) -> None:
        log_term = math.log(max(self.num_agents * horizon, 2))
        for i, j in matching.pairs:
            tc = self.customer_types[i]
            tp = self.provider_types[j]
            for (x, y), r in (
                ((tc, tp), rewards[AgentId(Side.CUSTOMER, i)]),
                ((tp, tc), rewards[AgentId(Side.PROVIDER, j)]),
            ):
                n = self.type_counts[x, y] + 1
                self.type_counts[x, y] = n
                self.type_mean[x, y] += (r - self.type_mean[x, y]) / n
                hw = self.config.ucb_scale * math.sqrt(log_term / n)
                self.type_lo[x, y], self.type_hi[x, y] = _clip_interval(self.type_mean[x, y], hw)
        self._refresh_pairs()

    def _refresh_pairs(self) -> None:
        tc = self.customer_types
        tp = self.provider_types
        self.lo_c = self.type_lo[np.ix_(tc, tp)]
        self.hi_c = self.type_hi[np.ix_(tc, tp)]
        self.lo_p = self.type_lo[np.ix_(tp, tc)]
        self.hi_p = self.type_hi[np.ix_(tp, tc)]

    def _pair_count(self, i: int, j: int) -> int:
        return int(self.type_counts[self.customer_types[i], self.provider_types[j]])

    def _pair_mean(self, side: Side, a: int, b: int) -> float:
        if side is Side.CUSTOMER:
            return float(self.type_mean[self.customer_types[a], self.provider_types[b]])
        return float(self.type_mean[self.provider_types[a], self.customer_types[b]])


class LinearConfidence(ConfidenceSets):
    """Ellipsoid-induced intervals for separable linear preferences.

    Each agent owns a hidden vector in the unit ball; utility for a partner is
    the inner product with the partner's known context. A ridge least-squares
    estimate (projected to the ball) plus the ellipsoid radius beta give the
    interval for each partner.
    """

    mode = Mode.LINEAR

    def __init__(
        self,
        customer_contexts: np.ndarray,
        provider_contexts: np.ndarray,
        config: ConfidenceConfig | None = None,
    ) -> None:
        cc = np.asarray(customer_contexts, dtype=float)
        pc = np.asarray(provider_contexts, dtype=float)
        if cc.ndim != 2 or pc.ndim != 2 or cc.shape[1] != pc.shape[1]:
            raise InvalidContext("contexts must be 2-d with a common dimension")
        norms = [np.linalg.norm(cc, axis=1), np.linalg.norm(pc, axis=1)]
        if any(n.size and n.max() > 1.0 + 1e-12 for n in norms):
            raise InvalidContext("context norm exceeds 1")
        super().__init__(cc.shape[0], pc.shape[0])
        self.config = config or ConfidenceConfig()
        self.dim = cc.shape[1]
        self.customer_contexts = cc
        self.provider_contexts = pc
        lam = self.config.lin_ridge
        n_agents = self.num_agents
        self.V = np.tile(np.eye(self.dim) * lam, (n_agents, 1, 1))
        self.b = np.zeros((n_agents, self.dim))
        self.pulls = np.zeros(n_agents, dtype=int)
        self.phi_hat = np.zeros((n_agents, self.dim))

    def _agent_slot(self, agent: AgentId) -> int:
        return agent.index if agent.side is Side.CUSTOMER else self.num_customers + agent.index

    def beta(self, horizon: int) -> float:
        return (
            self.config.lin_beta_d_coeff * self.dim * math.log(1.0 + horizon)
            + self.config.lin_beta_log_coeff * math.log(max(self.num_agents * horizon, 2))
        )

    def _apply(self, matching: Matching, rewards: dict[AgentId, float], horizon: int) -> None:
        updated = []
        for i, j in matching.pairs:
            for agent, ctx in (
                (AgentId(Side.CUSTOMER, i), self.provider_contexts[j]),
                (AgentId(Side.PROVIDER, j), self.customer_contexts[i]),
            ):
                slot = self._agent_slot(agent)
                self.V[slot] += np.outer(ctx, ctx)
                self.b[slot] += rewards[agent] * ctx
                self.pulls[slot] += 1
                updated.append(agent)
        for agent in updated:
            slot = self._agent_slot(agent)
            phi = np.linalg.solve(self.V[slot], self.b[slot])
            norm = np.linalg.norm(phi)
            if norm > 1.0:
                phi = phi / norm
            self.phi_hat[slot] = phi
            self._refresh_agent(agent, horizon)

    def _refresh_agent(self, agent: AgentId, horizon: int) -> None:
        slot = self._agent_slot(agent)
        partners = self.provider_contexts if agent.side is Side.CUSTOMER else self.customer_contexts
        if partners.shape[0] == 0:
            return
        center = partners @ self.phi_hat[slot]
        vinv = np.linalg.inv(self.V[slot])
        bonus = np.sqrt(self.beta(horizon)) * np.sqrt(np.einsum("nd,de,ne->n", partners, vinv, partners))
        lo = np.maximum(-1.0, center - bonus)
        hi = np.minimum(1.0, center + bonus)
        if agent.side is Side.CUSTOMER:
            self.lo_c[agent.index] = lo
            self.hi_c[agent.index] = hi
        else:
            self.lo_p[agent.index] = lo
            self.hi_p[agent.index] = hi

    def _pair_count(self, i: int, j: int) -> int:
        return int(min(self.pulls[i], self.pulls[self.num_customers + j]))

    def _pair_mean(self, side: Side, a: int, b: int) -> float:
        if side is Side.CUSTOMER:
            return float(self.provider_contexts[b] @ self.phi_hat[a])
        return float(self.customer_contexts[b] @ self.phi_hat[self.num_customers + a])


def init_confidence(
    mode: Mode,
    num_customers: int,
    num_providers: int,
    *,
    customer_types: np.ndarray | None = None,
    provider_types: np.ndarray | None = None,
    num_types: int | None = None,
    customer_contexts: np.ndarray | None = None,
    provider_contexts: np.ndarray | None = None,
    config: ConfidenceConfig | None = None,
) -> ConfidenceSets:
    """Fresh confidence sets: every interval [-1, 1], every counter zero."""
    if mode is Mode.UNSTRUCTURED:
        return UnstructuredConfidence(num_customers, num_providers, config)
    if mode is Mode.TYPED:
        if customer_types is None or provider_types is None or num_types is None:
            raise ValueError("typed mode needs type assignments")
        return TypedConfidence(customer_types, provider_types, num_types, config)
    if customer_contexts is None or provider_contexts is None:
        raise ValueError("linear mode needs contexts")
    return LinearConfidence(customer_contexts, provider_contexts, config)
