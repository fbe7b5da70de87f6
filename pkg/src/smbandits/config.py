"""Experiment configuration: versioned JSON schema with strict validation.

Hand-rolled validation keeps the dependency surface at zero and lets error
messages point at the offending key path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .confidence import ConfidenceConfig
from .environment import ArrivalSpec, NoiseSpec, PolicySpec, SweepCell
from .errors import ConfigError
from .market import UtilityMatrix

SCHEMA_VERSION = 1

_POLICY_KINDS = (
    "match_ucb",
    "match_typed_ucb",
    "match_lin_ucb",
    "match_ucb_prime",
    "match_ntu_ucb",
    "etc",
    "revenue_frictions",
)
_CLASSES = ("unstructured", "typed", "linear")


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _take(obj: dict, path: str, allowed: dict[str, type | tuple[type, ...]]) -> dict:
    """Check types of present keys and reject unknown ones."""
    _require(isinstance(obj, dict), path, "expected an object")
    unknown = set(obj) - set(allowed)
    _require(not unknown, path, f"unknown keys {sorted(unknown)}")
    for key, types in allowed.items():
        if key in obj:
            _require(isinstance(obj[key], types), f"{path}.{key}", f"expected {types}")
    return obj


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment cell: instance recipe, policy, horizon, seeds."""

    preference_class: str
    customers: int
    providers: int
    horizon: int
    seeds: tuple[int, ...]
    policy: PolicySpec
    num_types: int = 3
    dim: int = 3
    arrival: ArrivalSpec = field(default_factory=ArrivalSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    ntu: bool = False
    stability_eps: float = 0.0
    name: str = "experiment"
    truth: UtilityMatrix | None = None

    def cell(self) -> SweepCell:
        return SweepCell(
            name=self.name,
            klass=self.preference_class,
            num_customers=self.customers,
            num_providers=self.providers,
            horizon=self.horizon,
            policy=self.policy,
            seeds=self.seeds,
            num_types=self.num_types,
            dim=self.dim,
            arrival=self.arrival,
            noise=self.noise,
            stability_eps=self.stability_eps,
            truth=self.truth,
        )


def _parse_policy(obj: dict, path: str, ntu: bool) -> PolicySpec:
    _take(
        obj,
        path,
        {
            "kind": str,
            "ucb_scale": (int, float),
            "lin_beta_d_coeff": (int, float),
            "lin_beta_log_coeff": (int, float),
            "lin_ridge": (int, float),
            "epsilon": (int, float),
            "etc_pulls_per_pair": int,
        },
    )
    kind = obj.get("kind")
    _require(kind in _POLICY_KINDS, f"{path}.kind", f"must be one of {_POLICY_KINDS}")
    if ntu:
        _require(kind == "match_ntu_ucb", f"{path}.kind", "ntu experiments use match_ntu_ucb")
    conf = ConfidenceConfig(
        ucb_scale=float(obj.get("ucb_scale", 8.0)),
        lin_beta_d_coeff=float(obj.get("lin_beta_d_coeff", 4.0)),
        lin_beta_log_coeff=float(obj.get("lin_beta_log_coeff", 8.0)),
        lin_ridge=float(obj.get("lin_ridge", 1.0)),
    )
    epsilon = float(obj.get("epsilon", 0.3))
    if kind == "revenue_frictions":
        _require(epsilon > 0, f"{path}.epsilon", "must be positive")
    return PolicySpec(
        kind=kind,
        confidence=conf,
        epsilon=epsilon,
        etc_pulls_per_pair=obj.get("etc_pulls_per_pair"),
    )


def _parse_arrival(obj: dict, path: str) -> ArrivalSpec:
    _take(obj, path, {"kind": str, "p": (int, float), "schedule": list})
    kind = obj.get("kind", "all")
    _require(kind in ("all", "iid_subset", "fixed"), f"{path}.kind", "must be all|iid_subset|fixed")
    if kind == "iid_subset":
        p = float(obj.get("p", 1.0))
        _require(0.0 < p <= 1.0, f"{path}.p", "must lie in (0, 1]")
        return ArrivalSpec(kind="iid_subset", probability=p)
    if kind == "fixed":
        raw = obj.get("schedule")
        _require(isinstance(raw, list) and raw, f"{path}.schedule", "must be a non-empty list")
        schedule = []
        for k, entry in enumerate(raw):
            _require(
                isinstance(entry, list) and len(entry) == 2,
                f"{path}.schedule[{k}]",
                "expected [customer list, provider list]",
            )
            schedule.append((tuple(int(x) for x in entry[0]), tuple(int(x) for x in entry[1])))
        return ArrivalSpec(kind="fixed", schedule=tuple(schedule))
    return ArrivalSpec()


def _parse_noise(obj: dict, path: str) -> NoiseSpec:
    _take(obj, path, {"kind": str, "sigma": (int, float)})
    kind = obj.get("kind", "gaussian")
    _require(kind in ("gaussian", "bernoulli"), f"{path}.kind", "must be gaussian|bernoulli")
    sigma = float(obj.get("sigma", 1.0))
    _require(sigma >= 0, f"{path}.sigma", "must be nonnegative")
    return NoiseSpec(kind=kind, sigma=sigma)


def _parse_truth(obj: dict, path: str, n_c: int, n_p: int) -> UtilityMatrix:
    _take(obj, path, {"customer_values": list, "provider_values": list})
    _require("customer_values" in obj and "provider_values" in obj, path, "needs both value matrices")
    try:
        truth = UtilityMatrix(np.asarray(obj["customer_values"]), np.asarray(obj["provider_values"]))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _require(
        truth.num_customers == n_c and truth.num_providers == n_p,
        path,
        f"truth shape {truth.num_customers}x{truth.num_providers} differs from market {n_c}x{n_p}",
    )
    return truth


def parse_config(obj: dict, path: str = "config") -> ExperimentConfig:
    _take(
        obj,
        path,
        {
            "schema_version": int,
            "name": str,
            "class": str,
            "customers": int,
            "providers": int,
            "num_types": int,
            "dim": int,
            "policy": dict,
            "horizon": int,
            "seeds": list,
            "arrival": dict,
            "noise": dict,
            "ntu": bool,
            "stability_eps": (int, float),
            "truth": dict,
        },
    )
    _require("schema_version" in obj, f"{path}.schema_version", "is required")
    _require(
        obj["schema_version"] == SCHEMA_VERSION,
        f"{path}.schema_version",
        f"unsupported version {obj['schema_version']} (expected {SCHEMA_VERSION})",
    )
    for key in ("class", "customers", "providers", "policy", "horizon", "seeds"):
        _require(key in obj, f"{path}.{key}", "is required")
    _require(obj["class"] in _CLASSES, f"{path}.class", f"must be one of {_CLASSES}")
    _require(obj["customers"] > 0, f"{path}.customers", "must be positive")
    _require(obj["providers"] > 0, f"{path}.providers", "must be positive")
    _require(obj["horizon"] > 0, f"{path}.horizon", "must be positive")
    seeds = obj["seeds"]
    _require(bool(seeds), f"{path}.seeds", "must be a non-empty list")
    _require(all(isinstance(s, int) for s in seeds), f"{path}.seeds", "entries must be integers")
    ntu = bool(obj.get("ntu", False))
    policy = _parse_policy(obj["policy"], f"{path}.policy", ntu)
    if policy.kind == "match_typed_ucb":
        _require(obj["class"] == "typed", f"{path}.class", "match_typed_ucb needs class=typed")
    if policy.kind == "match_lin_ucb":
        _require(obj["class"] == "linear", f"{path}.class", "match_lin_ucb needs class=linear")
    arrival = _parse_arrival(obj.get("arrival", {}), f"{path}.arrival")
    noise = _parse_noise(obj.get("noise", {}), f"{path}.noise")
    stability_eps = float(obj.get("stability_eps", 0.0))
    if policy.kind == "revenue_frictions" and "stability_eps" not in obj:
        stability_eps = policy.epsilon
    truth = None
    if "truth" in obj:
        _require(obj["class"] == "unstructured", f"{path}.truth", "fixed truth requires class=unstructured")
        truth = _parse_truth(obj["truth"], f"{path}.truth", obj["customers"], obj["providers"])
    return ExperimentConfig(
        preference_class=obj["class"],
        customers=obj["customers"],
        providers=obj["providers"],
        horizon=obj["horizon"],
        seeds=tuple(seeds),
        policy=policy,
        num_types=obj.get("num_types", 3),
        dim=obj.get("dim", 3),
        arrival=arrival,
        noise=noise,
        ntu=ntu,
        stability_eps=stability_eps,
        name=obj.get("name", "experiment"),
        truth=truth,
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_config(obj)
