"""Command-line entry point: run experiments, score outcomes, verify properties.

``run`` executes a config and writes a trace CSV (seed-major, round-minor)
plus a summary JSON; ``score`` evaluates one outcome file against one
instance file; ``verify`` replays the randomized property suite and exits
non-zero on any violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import environment as env
from .config import load_config
from .errors import ConfigError, SmbError
from .instability import (
    max_unhappiness_coalition,
    min_stabilizing_subsidy,
    ntu_subset_instability,
    ntu_subset_instability_bruteforce,
    subset_instability,
    subset_instability_bruteforce,
    utility_difference,
)
from .market import (
    Matching,
    MarketOutcome,
    UtilityMatrix,
    is_stable_ntu,
    is_stable_tu,
    max_weight_matching_with_duals,
    stable_outcome_from_duals,
)

CSV_COLUMNS = ("round", "seed", "instability", "cum_regret", "width_sum", "revenue", "bound_only")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _resolve_threads(flag: int | None) -> int:
    env_value = os.environ.get("SMB_THREADS")
    if env_value is not None:
        try:
            return max(1, int(env_value))
        except ValueError as exc:
            raise ConfigError(f"SMB_THREADS must be an integer, got {env_value!r}") from exc
    return max(1, flag or 1)


def write_trace_csv(path: Path, traces: dict[int, env.RegretTrace]) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for seed in sorted(traces):
        trace = traces[seed]
        cum = trace.cum_regret
        for t in range(trace.horizon):
            lines.append(
                ",".join(
                    (
                        str(t + 1),
                        str(seed),
                        _fmt(trace.instability[t]),
                        _fmt(cum[t]),
                        _fmt(trace.width_sum[t]),
                        _fmt(trace.revenue[t]),
                        str(int(trace.bound_only[t])),
                    )
                )
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    threads = _resolve_threads(args.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = env.sweep([config.cell()], threads=threads)
    traces = results[config.name]
    write_trace_csv(out_dir / f"{config.name}_trace.csv", traces)
    summary = env.summarize(traces)
    summary["name"] = config.name
    summary["horizon"] = config.horizon
    summary["policy"] = config.policy.kind
    (out_dir / f"{config.name}_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {out_dir / (config.name + '_trace.csv')}")
    print(f"wrote {out_dir / (config.name + '_summary.json')}")
    return 0


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _utility_from_snapshot(obj: dict, path: str) -> UtilityMatrix:
    for key in ("customer_values", "provider_values"):
        if key not in obj:
            raise ConfigError(f"{path}: missing {key}")
    try:
        return UtilityMatrix(np.asarray(obj["customer_values"]), np.asarray(obj["provider_values"]))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _outcome_from_json(obj: dict, path: str, n_c: int, n_p: int) -> tuple[MarketOutcome, bool]:
    if "matching" not in obj:
        raise ConfigError(f"{path}: missing matching")
    try:
        matching = Matching(tuple((int(i), int(j)) for i, j in obj["matching"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad matching: {exc}") from exc
    for i, j in matching.pairs:
        if not (0 <= i < n_c and 0 <= j < n_p):
            raise ConfigError(f"{path}: pair ({i},{j}) out of range")
    ntu = bool(obj.get("ntu", False))
    tau_c = np.asarray(obj.get("customer_transfers", np.zeros(n_c)), dtype=float)
    tau_p = np.asarray(obj.get("provider_transfers", np.zeros(n_p)), dtype=float)
    if tau_c.shape != (n_c,) or tau_p.shape != (n_p,):
        raise ConfigError(f"{path}: transfer vectors must have lengths {n_c} and {n_p}")
    return MarketOutcome(matching, tau_c, tau_p), ntu


def cmd_score(args: argparse.Namespace) -> int:
    instance = _load_json(args.instance)
    outcome_obj = _load_json(args.outcome)
    truth = _utility_from_snapshot(instance, args.instance)
    outcome, ntu = _outcome_from_json(outcome_obj, args.outcome, truth.num_customers, truth.num_providers)
    if ntu:
        report = ntu_subset_instability(truth, outcome.matching)
        payload = {
            "ntu": True,
            "instability": report.value,
            "subsidies_customers": report.subsidies_customers.tolist(),
            "subsidies_providers": report.subsidies_providers.tolist(),
        }
    else:
        report = subset_instability(truth, outcome)
        subsidy_total, s_c, s_p = min_stabilizing_subsidy(truth, outcome)
        unhappiness, coalition = max_unhappiness_coalition(truth, outcome)
        payload = {
            "ntu": False,
            "instability": report.value,
            "utility_difference": utility_difference(truth, outcome),
            "subsidy_total": subsidy_total,
            "subsidies_customers": s_c.tolist(),
            "subsidies_providers": s_p.tolist(),
            "max_coalition_unhappiness": unhappiness,
            "coalition": sorted(repr(a) for a in coalition),
            "witness_subset": sorted(repr(a) for a in report.witness_subset),
            "blocking_pairs": sorted(list(p) for p in report.blocking_pairs),
        }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _verify_properties(seed: int, cases: int) -> list[str]:
    """Randomized cross-checks of the core identities; returns failure notes."""
    rng = np.random.default_rng(seed)
    failures: list[str] = []

    def record(cond: bool, note: str) -> None:
        if not cond:
            failures.append(note)

    for case in range(cases):
        n_c = int(rng.integers(1, 5))
        n_p = int(rng.integers(1, 5))
        u = UtilityMatrix(rng.uniform(-1, 1, (n_c, n_p)), rng.uniform(-1, 1, (n_p, n_c)))
        match, duals = max_weight_matching_with_duals(u)
        record(
            abs(duals.total() - match.total_utility(u)) < 1e-9,
            f"case {case}: duality gap {duals.total() - match.total_utility(u):.2e}",
        )
        reconstructed = stable_outcome_from_duals(u, match, duals)
        record(is_stable_tu(u, reconstructed, 0.0), f"case {case}: reconstructed outcome unstable")

        k = int(rng.integers(0, min(n_c, n_p) + 1))
        ci = rng.permutation(n_c)[:k]
        pj = rng.permutation(n_p)[:k]
        m = Matching(list(zip(ci.tolist(), pj.tolist())))
        tau_c = np.zeros(n_c)
        tau_p = np.zeros(n_p)
        for i, j in m.pairs:
            x = float(rng.uniform(-1, 1))
            tau_c[i] = x
            tau_p[j] = -x
        out = MarketOutcome(m, tau_c, tau_p)
        report = subset_instability(u, out)
        brute = subset_instability_bruteforce(u, out)
        record(abs(report.value - brute) < 1e-9, f"case {case}: dual reduction {report.value} != brute {brute}")
        record(
            abs(report.subsidy_total() - report.value) < 1e-9,
            f"case {case}: subsidy total {report.subsidy_total()} != value {report.value}",
        )
        record(
            utility_difference(u, out) <= report.value + 1e-9,
            f"case {case}: utility difference exceeds instability",
        )
        record(
            (report.value <= 1e-9) == is_stable_tu(u, out, 0.0),
            f"case {case}: zero-instability/stability mismatch",
        )

        # Lipschitz robustness of the metric in the utilities.
        delta_c = rng.uniform(-0.1, 0.1, (n_c, n_p))
        delta_p = rng.uniform(-0.1, 0.1, (n_p, n_c))
        perturbed = UtilityMatrix(u.customer_values + delta_c, u.provider_values + delta_p)
        change = abs(subset_instability(perturbed, out).value - report.value)
        bound = 2.0 * (np.abs(delta_c).max(axis=1).sum() + np.abs(delta_p).max(axis=1).sum())
        record(change <= bound + 1e-9, f"case {case}: Lipschitz bound violated")

        # NTU metric: exact solver vs candidate-grid oracle, zero iff stable.
        ntu_report = ntu_subset_instability(u, m)
        ntu_oracle = ntu_subset_instability_bruteforce(u, m)
        record(
            abs(ntu_report.value - ntu_oracle) < 1e-9,
            f"case {case}: NTU exact {ntu_report.value} != oracle {ntu_oracle}",
        )
        record(
            (ntu_report.value <= 1e-9) == is_stable_ntu(u, m),
            f"case {case}: NTU zero-instability/stability mismatch",
        )

    # Short bandit run: certificate and determinism.
    instance = env.gen_instance("unstructured", 3, 3, seed=seed)
    spec = env.PolicySpec("match_ucb")
    trace_a = env.run(instance, spec, 300)
    trace_b = env.run(instance, spec, 300)
    record(
        bool(np.array_equal(trace_a.instability, trace_b.instability)),
        "replayed run is not bit-identical",
    )
    mask = trace_a.containment
    record(
        bool((trace_a.instability[mask] <= trace_a.width_sum[mask] + 1e-9).all()),
        "width certificate violated on a containment round",
    )
    return failures


def cmd_verify(args: argparse.Namespace) -> int:
    failures = _verify_properties(args.seed, args.cases)
    if failures:
        for note in failures:
            print(f"FAIL {note}", file=sys.stderr)
        print(f"verify: {len(failures)} violations", file=sys.stderr)
        return 1
    print(f"verify: all checks passed ({args.cases} randomized cases)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smbandits",
        description="Matching-market bandit simulator: run experiments, score outcomes, verify invariants.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser(
        "run",
        help="execute an experiment config",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "config keys (schema_version=1):\n"
            "  class: unstructured|typed|linear   customers, providers: ints\n"
            "  num_types (default 3), dim (default 3), horizon, seeds: [ints]\n"
            "  policy.kind: match_ucb|match_typed_ucb|match_lin_ucb|match_ucb_prime|\n"
            "               match_ntu_ucb|etc|revenue_frictions\n"
            "  policy knobs: ucb_scale (default 8.0), lin_beta_d_coeff (4.0),\n"
            "    lin_beta_log_coeff (8.0), lin_ridge (1.0), epsilon (0.3),\n"
            "    etc_pulls_per_pair (default ceil((T/|A|)^(2/3) log^(1/3)(|A|T)))\n"
            "  arrival.kind: all (default)|iid_subset (p)|fixed (schedule)\n"
            "  noise.kind: gaussian (sigma, default 1.0)|bernoulli\n"
            "  ntu: bool (default false); stability_eps: float (default 0, or\n"
            "    policy epsilon for revenue_frictions); truth: fixed value matrices\n"
        ),
    )
    p_run.add_argument("--config", required=True, help="path to a JSON experiment config")
    p_run.add_argument("--threads", type=int, default=1, help="parallel replicas (SMB_THREADS overrides)")
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_score = sub.add_parser("score", help="score an outcome file against an instance file")
    p_score.add_argument("--instance", required=True, help="instance snapshot JSON")
    p_score.add_argument("--outcome", required=True, help="outcome JSON")
    p_score.set_defaults(func=cmd_score)

    p_verify = sub.add_parser("verify", help="run the randomized property suite")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--cases", type=int, default=200)
    p_verify.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SmbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
