"""Matching markets with transfers, instability metrics, and UCB-style policies."""

from .confidence import ConfidenceConfig, Mode, init_confidence
from .environment import (
    ArrivalSpec,
    MarketInstance,
    NoiseSpec,
    PolicySpec,
    RegretTrace,
    gen_hard_instance,
    gen_instance,
    run,
    sweep,
)
from .errors import (
    ConfigError,
    InvalidContext,
    InvalidOutcome,
    NoAlternative,
    ProtocolViolation,
    SmbError,
    TooLarge,
)
from .instability import (
    InstabilityReport,
    NtuInstabilityReport,
    max_unhappiness_coalition,
    min_stabilizing_subsidy,
    ntu_instability_upper_bound,
    ntu_subset_instability,
    ntu_subset_instability_bruteforce,
    subset_instability,
    subset_instability_bruteforce,
    subset_instability_value,
    utility_difference,
)
from .market import (
    AgentId,
    DualPrices,
    Matching,
    MarketOutcome,
    Side,
    UtilityMatrix,
    customer,
    is_stable_ntu,
    is_stable_tu,
    max_weight_matching_with_duals,
    provider,
    second_best_matching,
    stability_inequalities_hold,
)
from .policies import (
    RoundDecision,
    compute_match,
    compute_match_ntu,
    compute_match_prime,
)

__all__ = [name for name in dir() if not name.startswith("_")]
