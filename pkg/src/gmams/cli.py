"""Command-line front end tying the modules into reproducible runs.

Each subcommand reads JSON inputs, writes JSON/CSV outputs into --out,
and leaves a manifest.json beside them recording the command, input
digests, the fully resolved configuration and the seed.  Runs with equal
manifests produce byte-identical output files.

Exit status: 0 on success, 2 for parameter errors, 3 for infeasibility,
4 for numeric failure.
"""

import argparse
import json
import numbers
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .design import Boundaries, DesignParams, make_delta_config, null_config
from .errors import InfeasibilityError, NumericError, ParameterError
from .evaluation import evaluate, outcome_probabilities
from .io import SCHEMA_VERSION, write_csv, write_json, write_manifest
from .outcomes import cardinality_xi, cardinality_xi_prime, enumerate_xi
from .search import SearchConfig, optimise, single_stage_design
from .simulate import simulate_report
from .triangular import calibrate_triangular


def _load_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParameterError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path} is not valid JSON: {exc}") from exc
    if isinstance(data, dict):
        version = data.pop("schema_version", None)
        if version is not None and version != SCHEMA_VERSION:
            raise ParameterError(
                f"{path}: schema_version {version} is not supported "
                f"(this tool reads version {SCHEMA_VERSION})")
    return data


def _load_params(path) -> DesignParams:
    return DesignParams.from_dict(_load_json(path))


def _load_design(path) -> tuple[float, Boundaries]:
    data = _load_json(path)
    if not isinstance(data, dict) or "n" not in data:
        raise ParameterError(
            f"{path}: a design file needs 'n', 'futility' and 'efficacy'")
    n = data["n"]
    if isinstance(n, bool) or not isinstance(n, numbers.Real):
        raise ParameterError(f"{path}: 'n' must be a number, got {n!r}")
    return float(n), Boundaries.from_dict(data)


def _resolve_threads(threads) -> int:
    if threads is None:
        return os.cpu_count() or 1
    if threads < 1:
        raise ParameterError(f"--threads must be positive, got {threads}")
    return threads


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _design_dict(n: float, bounds: Boundaries) -> dict:
    return {"n": n, **bounds.to_dict()}


def _joined(values) -> str:
    return "|".join(str(v) for v in values)


# ---------------------------------------------------------------------------
# subcommands; each returns (inputs, config, seed) for the manifest
# ---------------------------------------------------------------------------


def _cmd_evaluate(args, out: Path):
    params = _load_params(args.params)
    n, bounds = _load_design(args.design)
    tol = 1e-6 if args.tol is None else args.tol
    seed = 0 if args.seed is None else args.seed
    threads = _resolve_threads(args.threads)
    chars = evaluate(params, bounds, n, tol=tol, seed=seed, threads=threads)
    write_json(out / "evaluate.json", {
        "schema_version": SCHEMA_VERSION,
        "command": "evaluate",
        "params": params.to_dict(),
        "design": _design_dict(n, bounds),
        "chars": chars.to_dict(),
    })
    if args.outcomes:
        rows = []
        configs = [null_config(params)] + [
            make_delta_config(params, r) for r in range(params.K + 1)]
        for config in configs:
            for wo, quad in outcome_probabilities(
                    params, bounds, n, config, tol=tol, seed=seed):
                rows.append((config.label, _joined(wo.outcome.psi),
                             _joined(wo.outcome.omega), wo.degeneracy,
                             quad.value, quad.error_estimate,
                             quad.points_used))
        write_csv(out / "outcomes.csv",
                  ["config", "psi", "omega", "degeneracy", "probability",
                   "error_estimate", "points_used"], rows)
    print(f"wrote {out / 'evaluate.json'}")
    config = {"params": params.to_dict(), "design": _design_dict(n, bounds),
              "tol": tol, "seed": seed, "threads": threads,
              "outcomes": bool(args.outcomes)}
    return {"params": args.params, "design": args.design}, config, seed


def _cmd_optimise(args, out: Path):
    params = _load_params(args.params)
    if args.config is None:
        cfg = SearchConfig()
        inputs = {"params": args.params}
    else:
        cfg = SearchConfig.from_dict(_load_json(args.config))
        inputs = {"params": args.params, "config": args.config}
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    threads = _resolve_threads(args.threads)
    result = optimise(params, cfg, threads=threads)
    write_json(out / "optimise.json", {
        "schema_version": SCHEMA_VERSION,
        "command": "optimise",
        "params": params.to_dict(),
        "result": result.to_dict(),
    })
    write_csv(out / "trace.csv", ["iteration", "best_objective"],
              list(enumerate(result.trace)))
    status = "feasible" if result.feasible else "infeasible"
    print(f"wrote {out / 'optimise.json'} "
          f"(n = {result.n_integer}, {status})")
    config = {"params": params.to_dict(), "search": result.config.to_dict(),
              "threads": threads}
    return inputs, config, result.config.seed


def _cmd_triangular(args, out: Path):
    params = _load_params(args.params)
    tol = 1e-6 if args.tol is None else args.tol
    seed = 0 if args.seed is None else args.seed
    threads = _resolve_threads(args.threads)
    design = calibrate_triangular(params, tol=tol,
                                  squared_delta=args.squared_delta,
                                  seed=seed, grid=args.grid, threads=threads)
    write_json(out / "triangular.json", {
        "schema_version": SCHEMA_VERSION,
        "command": "triangular",
        "params": params.to_dict(),
        "design": design.to_dict(),
    })
    print(f"wrote {out / 'triangular.json'}")
    config = {"params": params.to_dict(), "tol": tol, "seed": seed,
              "squared_delta": bool(args.squared_delta), "grid": args.grid,
              "threads": threads}
    return {"params": args.params}, config, seed


def _cmd_simulate(args, out: Path):
    params = _load_params(args.params)
    n, bounds = _load_design(args.design)
    seed = 0 if args.seed is None else args.seed
    if args.reps < 1:
        raise ParameterError(f"--reps must be positive, got {args.reps}")
    report = simulate_report(params, bounds, n,
                             replications=args.reps, seed=seed)
    write_json(out / "simulate.json", {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "params": params.to_dict(),
        "design": _design_dict(n, bounds),
        "report": report.to_dict(),
    })
    print(f"wrote {out / 'simulate.json'}")
    config = {"params": params.to_dict(), "design": _design_dict(n, bounds),
              "replications": args.reps, "seed": seed}
    return {"params": args.params, "design": args.design}, config, seed


def _cmd_enumerate(args, out: Path):
    K, J, d = args.K, args.J, args.d
    outcomes = enumerate_xi(d, J, K)
    xi = cardinality_xi(d, J, K)
    xi_prime = cardinality_xi_prime(d, J, K, (K,))
    write_csv(out / "outcomes.csv", ["psi", "omega"],
              [(_joined(o.psi), _joined(o.omega)) for o in outcomes])
    write_json(out / "enumerate.json", {
        "schema_version": SCHEMA_VERSION,
        "command": "enumerate",
        "K": K, "J": J, "d": d,
        "xi": xi,
        "xi_prime_null": xi_prime,
    })
    print(f"|Ξ| = {xi}, |Ξ′(0_K)| = {xi_prime}")
    return {}, {"K": K, "J": J, "d": d}, 0


def _cmd_fixed(args, out: Path):
    params = _load_params(args.params)
    tol = 1e-7 if args.tol is None else args.tol
    seed = 0 if args.seed is None else args.seed
    design = single_stage_design(params, tol=tol, seed=seed)
    write_json(out / "fixed.json", {
        "schema_version": SCHEMA_VERSION,
        "command": "fixed",
        "params": params.to_dict(),
        "n_fixed": design.n_total,
        "design": design.to_dict(),
    })
    print(f"wrote {out / 'fixed.json'} (N_fixed = {design.n_total})")
    config = {"params": params.to_dict(), "tol": tol, "seed": seed}
    return {"params": args.params}, config, seed


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(sub, params_required=True):
    if params_required:
        sub.add_argument("--params", required=True,
                         help="design parameters JSON file")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="RNG seed")
    sub.add_argument("--tol", type=float, default=None,
                     help="quadrature error tolerance")
    sub.add_argument("--threads", type=int, default=None,
                     help="worker threads (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmams",
        description="Design and evaluation of generalised multi-arm "
                    "multi-stage trials")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("evaluate",
                          help="operating characteristics of a given design")
    _add_common(sub)
    sub.add_argument("--design", required=True,
                     help="design JSON file with n, futility, efficacy")
    sub.add_argument("--outcomes", action="store_true",
                     help="also write per-outcome probabilities to CSV")
    sub.set_defaults(func=_cmd_evaluate)

    sub = subs.add_parser("optimise",
                          help="search for the minimal-cost feasible design")
    _add_common(sub)
    sub.add_argument("--config",
                     help="search configuration JSON file (optional)")
    sub.set_defaults(func=_cmd_optimise)

    sub = subs.add_parser("triangular",
                          help="calibrate a triangular-shape design")
    _add_common(sub)
    sub.add_argument("--squared-delta", action="store_true",
                     help="use the squared-effect information scale")
    sub.add_argument("--grid", type=int, default=24,
                     help="calibration grid resolution per axis")
    sub.set_defaults(func=_cmd_triangular)

    sub = subs.add_parser("simulate",
                          help="Monte Carlo check of a given design")
    _add_common(sub)
    sub.add_argument("--design", required=True,
                     help="design JSON file with n, futility, efficacy")
    sub.add_argument("--reps", type=int, default=10**5,
                     help="number of simulated trials per configuration")
    sub.set_defaults(func=_cmd_simulate)

    sub = subs.add_parser("enumerate",
                          help="list the outcome space and its cardinalities")
    _add_common(sub, params_required=False)
    sub.add_argument("--K", type=int, required=True,
                     help="number of experimental arms")
    sub.add_argument("--J", type=int, required=True,
                     help="maximum number of stages")
    sub.add_argument("--d", type=int, required=True,
                     help="rejections that stop the trial")
    sub.set_defaults(func=_cmd_enumerate)

    sub = subs.add_parser("fixed",
                          help="matched single-stage design and N_fixed")
    _add_common(sub)
    sub.set_defaults(func=_cmd_fixed)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        out = _out_dir(args)
        inputs, config, seed = args.func(args, out)
        write_manifest(out, args.command, inputs, config, seed,
                       time.perf_counter() - start)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


run = main


if __name__ == "__main__":
    sys.exit(main())
