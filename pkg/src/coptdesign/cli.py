"""Command line front end.

Subcommands:

* ``optimize``: run the configured search and write report.json,
  design.csv and per_start.csv into the output directory.
* ``evaluate``: score an explicit design (CSV of unit ids) under the
  configured model(s).
* ``round``: apportion a weight file into integer unit counts under all
  four rounding methods.
* ``compare``: best combinatorial design (all three algorithms) versus the
  best rounded design from a weight file.
* ``verify``: cross-check the search results against the brute-force
  oracle and, for small non-gaussian designs, the enumeration / Monte
  Carlo variance oracles.

Exit codes: 0 success, 2 configuration error, 3 infeasible problem,
4 numerical failure. ``COPT_THREADS`` overrides ``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .design import DesignState, is_infeasible
from .errors import ConfigError, InfeasibleError, NumericalError
from .oracle import brute_force_best, exact_info_small, mc_variance, oracle_model
from .problems import load_config, resolve_threads
from .rounding import METHODS, best_rounded_design, load_weights, round_weights
from .search import REVERSE_GREEDY, SearchConfig, multi_start

SCHEMA_VERSION = 1


def _json_value(v):
    return None if is_infeasible(v) else v


def _base_report(resolved, threads):
    return {
        "schema_version": SCHEMA_VERSION,
        "package": {
            "name": "coptdesign",
            "version": __version__,
            "kernel_backend": kernels.backend(),
        },
        "conventions": {
            "param_scale": resolved.param_scale,
            "scale_parameters_are_sd": True,
            "attenuation_applies_to_weights": True,
        },
        "threads": threads,
        "config": resolved.echo,
    }


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_design_csv(path: Path, problem, unit_ids):
    space = problem.space
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["unit_id", "obs_index", "cluster", "period", "individual",
             "coord_x", "coord_y", "treated"]
        )
        for uid in sorted(unit_ids):
            for i in space.units_by_id[uid].obs_indices:
                meta = space.obs_meta[i]
                writer.writerow(
                    [
                        uid,
                        i,
                        "" if meta.cluster is None else meta.cluster,
                        "" if meta.period is None else meta.period,
                        "" if meta.individual is None else meta.individual,
                        "" if meta.coord is None else repr(meta.coord[0]),
                        "" if meta.coord is None else repr(meta.coord[1]),
                        int(meta.treated),
                    ]
                )


def _read_design_csv(path) -> list[int]:
    ids = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "unit_id":
            raise ConfigError(f"{path}: expected a design CSV with a unit_id column")
        for row in reader:
            if row:
                ids.append(int(row[0]))
    if not ids:
        raise ConfigError(f"{path}: no design rows found")
    return sorted(set(ids))


def _problem_summary(problem):
    return {
        "n_units": problem.space.n_units,
        "n_obs": problem.space.n_obs,
        "unit_size": problem.space.unit_size,
        "n_params": problem.n_params,
        "n_duplicate_classes": len(problem.classes),
        "duplicate_classes": {str(k): ids for k, ids in enumerate(problem.classes)},
    }


def _run_algorithms(problem, resolved, threads, algorithms):
    reports = {}
    for algorithm in algorithms:
        starts = 1 if algorithm == REVERSE_GREEDY else resolved.starts
        cfg = SearchConfig(
            m=resolved.m,
            starts=starts,
            seed=resolved.seed,
            algorithm=algorithm,
            greedy_start_size=resolved.greedy_start_size,
            threads=threads,
        )
        reports[algorithm] = multi_start(problem, cfg)
    return reports


def cmd_optimize(args) -> int:
    resolved = load_config(args.config)
    threads = resolve_threads(resolved.threads, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = resolved.build_problem()
    cfg = resolved.search_config()
    cfg.threads = threads
    t0 = time.perf_counter()
    report = multi_start(problem, cfg)
    total = time.perf_counter() - t0
    best_state = DesignState(problem, report.best_ids)
    payload = _base_report(resolved, threads)
    payload["problem"] = _problem_summary(problem)
    payload["results"] = report.to_dict()
    payload["results"]["per_model_values"] = [
        _json_value(v) for v in best_state.value_components()
    ]
    payload["timing"] = {"total_seconds": total, **report.timing()}
    _write_json(out / "report.json", payload)
    _write_design_csv(out / "design.csv", problem, report.best_ids)
    with open(out / "per_start.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start", "value", "iterations"])
        for r in report.start_results:
            writer.writerow([r.index, "" if not r.ok else repr(r.value), r.iterations])
    print(
        f"optimize: best objective {report.best_value:.6g} "
        f"({report.algorithm}, {report.starts} starts) -> {out / 'report.json'}"
    )
    return 0


def cmd_evaluate(args) -> int:
    resolved = load_config(args.config)
    threads = resolve_threads(resolved.threads, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = resolved.build_problem()
    ids = _read_design_csv(args.design)
    unknown = [i for i in ids if i not in problem.space.units_by_id]
    if unknown:
        raise ConfigError(f"design references unknown unit ids: {unknown[:5]}")
    state = DesignState(problem, ids)
    payload = _base_report(resolved, threads)
    payload["problem"] = _problem_summary(problem)
    payload["results"] = {
        "design_units": ids,
        "n_units": len(ids),
        "value": _json_value(state.value()),
        "per_model_values": [_json_value(v) for v in state.value_components()],
    }
    _write_json(out / "evaluate.json", payload)
    value = state.value()
    print(f"evaluate: objective {'infeasible' if is_infeasible(value) else f'{value:.6g}'}")
    return 0


def cmd_round(args) -> int:
    resolved = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = resolved.build_problem()
    weights = load_weights(args.weights)
    counts = {}
    for method in METHODS:
        try:
            rounded = round_weights(weights, resolved.m, method)
        except ConfigError as exc:
            counts[method] = {"error": str(exc)}
            continue
        counts[method] = {
            str(cid): int(k) for cid, k in zip(weights.class_ids, rounded)
        }
    payload = _base_report(resolved, 1)
    payload["problem"] = _problem_summary(problem)
    payload["results"] = {"m": resolved.m, "counts": counts}
    _write_json(out / "round.json", payload)
    print(f"round: wrote counts for {len(METHODS)} methods -> {out / 'round.json'}")
    return 0


def cmd_compare(args) -> int:
    resolved = load_config(args.config)
    threads = resolve_threads(resolved.threads, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = resolved.build_problem()
    weights = load_weights(args.weights)
    t0 = time.perf_counter()
    reports = _run_algorithms(problem, resolved, threads, args.algorithms)
    comb_best = min(reports.values(), key=lambda r: (r.best_value, r.algorithm))
    rounded = best_rounded_design(weights, resolved.m, problem)
    total = time.perf_counter() - t0
    ratio = rounded["best_value"] / comb_best.best_value
    payload = _base_report(resolved, threads)
    payload["problem"] = _problem_summary(problem)
    payload["results"] = {
        "combinatorial": {name: rep.to_dict() for name, rep in reports.items()},
        "combinatorial_best_value": comb_best.best_value,
        "combinatorial_best_algorithm": comb_best.algorithm,
        "combinatorial_best_units": list(comb_best.best_ids),
        "rounding": {
            method: (
                {"error": info["error"]}
                if "error" in info
                else {"counts": info["counts"], "value": info["value"]}
            )
            for method, info in rounded["per_method"].items()
        },
        "rounding_best_method": rounded["best_method"],
        "rounding_best_value": rounded["best_value"],
        "variance_ratio": ratio,
        "variance_ratio_4dp": f"{ratio:.4f}",
    }
    payload["timing"] = {"total_seconds": total}
    _write_json(out / "compare.json", payload)
    _write_design_csv(out / "design.csv", problem, comb_best.best_ids)
    print(
        f"compare: rounded/combinatorial variance ratio {ratio:.4f} "
        f"({rounded['best_value']:.6g} / {comb_best.best_value:.6g})"
    )
    return 0


def cmd_verify(args) -> int:
    resolved = load_config(args.config)
    threads = resolve_threads(resolved.threads, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = resolved.build_problem()
    t0 = time.perf_counter()
    bf_ids, bf_value = brute_force_best(problem, resolved.m, budget=args.budget)
    reports = _run_algorithms(problem, resolved, threads, args.algorithms)
    checks = {}
    for name, rep in reports.items():
        entry = {
            "value": rep.best_value,
            "ge_brute_force": bool(rep.best_value >= bf_value - 1e-9 * max(1.0, bf_value)),
        }
        if name == "local":
            entry["within_3_2_bound"] = bool(rep.best_value <= 1.5 * bf_value + 1e-12)
        checks[name] = entry
    results = {
        "brute_force_value": bf_value,
        "brute_force_units": bf_ids,
        "algorithms": checks,
    }
    spec0 = resolved.models[0]
    if not spec0.family_link.is_gaussian_identity and len(resolved.models) == 1:
        order = [
            i for uid in bf_ids for i in problem.space.units_by_id[uid].obs_indices
        ]
        metas = [problem.space.obs_meta[i] for i in order]
        model = oracle_model(metas, spec0)
        try:
            M = exact_info_small(model)
            exact = float(resolved.c @ np.linalg.solve(M, resolved.c))
            mc, se = mc_variance(model, resolved.c, args.mc_iterations, resolved.seed)
            results["outcome_enumeration"] = {
                "exact_variance": exact,
                "mc_variance": mc,
                "mc_standard_error": se,
                "relative_difference": abs(mc - exact) / exact,
            }
        except InfeasibleError as exc:
            results["outcome_enumeration"] = {"skipped": str(exc)}
    payload = _base_report(resolved, threads)
    payload["problem"] = _problem_summary(problem)
    payload["results"] = results
    payload["timing"] = {"total_seconds": time.perf_counter() - t0}
    _write_json(out / "verify.json", payload)
    ok = all(entry["ge_brute_force"] for entry in checks.values())
    print(f"verify: brute force {bf_value:.6g}; all algorithms >= oracle: {ok}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coptdesign",
        description="c-optimal experimental designs for correlated observations",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="JSON configuration file")
        p.add_argument("--out", default="coptdesign-out", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (0 = all cores); COPT_THREADS overrides")

    p = sub.add_parser("optimize", help="run the configured search algorithm")
    add_common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", help="evaluate an explicit design")
    add_common(p)
    p.add_argument("--design", required=True, help="design CSV (as written by optimize)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("round", help="round a weight file to integer counts")
    add_common(p)
    p.add_argument("--weights", required=True, help="CSV of class_id,weight records")
    p.set_defaults(func=cmd_round)

    p = sub.add_parser("compare", help="combinatorial versus rounded-weight designs")
    add_common(p)
    p.add_argument("--weights", required=True, help="CSV of class_id,weight records")
    p.add_argument("--algorithms", nargs="+", default=["local", "greedy", "reverse_greedy"])
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", help="cross-check against the verification oracles")
    add_common(p)
    p.add_argument("--budget", type=int, default=1_000_000,
                   help="maximum number of designs for brute-force enumeration")
    p.add_argument("--mc-iterations", type=int, default=100_000)
    p.add_argument("--algorithms", nargs="+", default=["local", "greedy", "reverse_greedy"])
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleError as exc:
        print(f"infeasible problem: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
