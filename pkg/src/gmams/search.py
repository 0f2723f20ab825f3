"""Optimisation of the group size and stopping boundaries.

A design is scored by a weighted mix of its expected sample sizes under
the global null and under the least favourable configuration, plus its
maximal sample size; designs missing an error-rate target pay a penalty
proportional to the relative violation.  The penalty weight defaults to
the total sample size of the corresponding single-stage design, so an
infeasible design never beats a feasible one of typical size.

The continuous problem is attacked with a small real-coded evolutionary
strategy (tournament selection, blend crossover, Gaussian mutation,
elitism) over (n, f_1..f_{J-1}, e_1..e_J), the final futility bound tied
to the final efficacy bound, restarted over independent replicates and
finished with a local simplex polish.  Candidates inside the loop are
scored on a fixed lattice through BatchEvaluator; the reported design is
re-scored with the accurate path.  Everything is deterministic given the
config seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq, minimize

from .design import Boundaries, DesignParams, make_delta_config, null_config
from .errors import InfeasibilityError, ParameterError
from .evaluation import BatchEvaluator, OperatingChars, evaluate

__all__ = ["SearchConfig", "SearchResult", "FixedDesign", "objective",
           "compute_n_fixed", "single_stage_design", "optimise",
           "resolve_integer_n"]

# Constraint slack when declaring a design feasible; absorbs quadrature
# noise right at the boundary, where optimised designs tend to sit.
_FEASIBILITY_TOL = 1e-4

# The batched search loop tightens both constraints by this much, so a
# design shaved to the lattice's noise floor still clears the accurate
# feasibility check afterwards.
_INNER_MARGIN = 2e-4


@dataclass(frozen=True)
class SearchConfig:
    """Objective weights, constraint penalty and search knobs.

    penalty and n_box may be left as None; they are then resolved at run
    time from the single-stage sample size (penalty = N_fixed, group
    sizes searched over [1, 4 N_fixed / (K+1)]).  The resolved values
    are reported back in SearchResult.config so a run can be reproduced
    from its output alone.
    """

    w1: float = 1.0 / 3.0
    w2: float = 1.0 / 3.0
    w3: float = 1.0 / 3.0
    penalty: float | None = None
    population_size: int = 100
    max_iterations: int = 500
    replicates: int = 10
    seed: int = 0
    bound_box: tuple[float, float] = (-6.0, 6.0)
    n_box: tuple[float, float] | None = None
    stall_iterations: int = 80
    integer_policy: str = "reoptimize"
    lattice_points: int = 128
    lattice_shifts: int = 8

    def __post_init__(self):
        problems = []
        if min(self.w1, self.w2, self.w3) < 0:
            problems.append("weights must be nonnegative")
        if not self.w1 + self.w2 > 0:
            problems.append("w1 + w2 must be positive")
        if self.penalty is not None and not self.penalty > 0:
            problems.append("penalty must be positive")
        if self.population_size < 10:
            problems.append("population_size must be at least 10")
        if self.max_iterations < 1:
            problems.append("max_iterations must be at least 1")
        if self.replicates < 1:
            problems.append("replicates must be at least 1")
        if self.stall_iterations < 1:
            problems.append("stall_iterations must be at least 1")
        if self.seed < 0:
            problems.append("seed must be nonnegative")
        if not self.bound_box[0] < self.bound_box[1]:
            problems.append("bound_box must be an increasing pair")
        if self.n_box is not None and not 0 < self.n_box[0] < self.n_box[1]:
            problems.append("n_box must be an increasing pair of positive sizes")
        if self.integer_policy not in ("reoptimize", "up"):
            problems.append("integer_policy must be 'reoptimize' or 'up'")
        if self.lattice_points < 16 or self.lattice_shifts < 2:
            problems.append("lattice needs >= 16 points and >= 2 shifts")
        if problems:
            raise ParameterError("; ".join(problems))

    def to_dict(self) -> dict:
        return {
            "w1": self.w1, "w2": self.w2, "w3": self.w3,
            "penalty": self.penalty,
            "population_size": self.population_size,
            "max_iterations": self.max_iterations,
            "replicates": self.replicates,
            "seed": self.seed,
            "bound_box": list(self.bound_box),
            "n_box": None if self.n_box is None else list(self.n_box),
            "stall_iterations": self.stall_iterations,
            "integer_policy": self.integer_policy,
            "lattice_points": self.lattice_points,
            "lattice_shifts": self.lattice_shifts,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SearchConfig":
        if not isinstance(data, dict):
            raise ParameterError("search config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown search config fields: {', '.join(unknown)}")
        kwargs = dict(data)
        for key in ("bound_box", "n_box"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class SearchResult:
    """Outcome of optimise(): the design, its score and the run record.

    objective and chars come from the accurate evaluation of the final
    integer design; trace holds the best penalized objective after each
    generation of the winning replicate (nonincreasing by elitism).
    """

    n_star: float
    n_integer: int
    bounds: Boundaries
    objective: float
    chars: OperatingChars
    trace: tuple[float, ...]
    feasible: bool
    config: SearchConfig

    def to_dict(self) -> dict:
        # the trace is left out: it goes to its own CSV file
        return {
            "n_star": self.n_star,
            "n_integer": self.n_integer,
            "bounds": self.bounds.to_dict(),
            "objective": self.objective,
            "feasible": self.feasible,
            "chars": self.chars.to_dict(),
            "config": self.config.to_dict(),
        }


@dataclass(frozen=True)
class FixedDesign:
    """Single-stage reference design: critical value and group size."""

    critical: float
    n_star: float
    n_group: int
    n_total: int

    def to_dict(self) -> dict:
        return {"critical": self.critical, "n_star": self.n_star,
                "n_group": self.n_group, "n_total": self.n_total}


def _single_stage(params: DesignParams) -> DesignParams:
    """Projection onto J = 1 keeping the stage-1 allocation."""
    return DesignParams(
        K=params.K, J=1, a=params.a, b=params.b, c=params.c, d=params.d,
        alpha=params.alpha, beta=params.beta,
        delta=params.delta, delta0=params.delta0,
        sigma_sq=params.sigma_sq,
        ratios=tuple((row[0],) for row in params.ratios),
    )


def single_stage_design(params: DesignParams, tol: float = 1e-7,
                        seed: int = 0) -> FixedDesign:
    """Solve the J = 1 problem behind the penalty weight.

    First the critical value at which the order-a familywise error under
    the global null equals alpha (the error rate does not depend on n),
    then the group size at which the familywise power reaches 1 - beta,
    rounded to the nearest integer-feasible size with ties upward.
    """
    sub = params if params.J == 1 else _single_stage(params)
    null = null_config(sub)
    alt = make_delta_config(sub, sub.c)

    def size_gap(e1: float) -> float:
        chars = evaluate(sub, Boundaries((e1,), (e1,)), n=1.0,
                         configs=[null], tol=tol, seed=seed)
        return chars.fwer[sub.a - 1] - sub.alpha

    critical = float(brentq(size_gap, -2.0, 8.0, xtol=1e-9))
    bounds = Boundaries((critical,), (critical,))
    target = 1.0 - sub.beta

    def power_gap(n: float) -> float:
        chars = evaluate(sub, bounds, n=n, configs=[alt], tol=tol, seed=seed)
        return chars.fwp[(sub.b, sub.c, sub.c)] - target

    lo, hi = 1e-3, 64.0
    if power_gap(lo) >= 0.0:
        n_star = lo
    else:
        while power_gap(hi) < 0.0:
            hi *= 4.0
            if hi > 2 ** 24:
                raise InfeasibilityError(
                    "no finite group size reaches the power target "
                    f"(1 - beta = {target}) at delta = {sub.delta}")
        n_star = float(brentq(power_gap, lo, hi, xtol=1e-6))

    step = sub.n_step()
    n_group = max(step, int(math.floor(n_star / step + 0.5)) * step)
    total = n_group * sub.total_ratio(1)
    assert total.denominator == 1  # n_step makes every allocation integral
    return FixedDesign(critical=critical, n_star=n_star,
                       n_group=n_group, n_total=int(total))


@lru_cache(maxsize=64)
def compute_n_fixed(params: DesignParams) -> int:
    """Total sample size of the corresponding single-stage design."""
    return single_stage_design(params).n_total


def _penalty_weight(params: DesignParams, cfg: SearchConfig) -> float:
    return float(cfg.penalty) if cfg.penalty is not None else float(compute_n_fixed(params))


def _scored(ess_null, ess_alt, fwer, fwp, n, params: DesignParams,
            cfg: SearchConfig, penalty: float, margin: float = 0.0):
    """The penalized objective, vectorized over candidates."""
    max_ratio = float(params.total_ratio(params.J))
    base = cfg.w1 * np.asarray(ess_null) + cfg.w2 * np.asarray(ess_alt) \
        + cfg.w3 * np.asarray(n) * max_ratio
    violation = (np.maximum(np.asarray(fwer) - (params.alpha - margin), 0.0)
                 / params.alpha
                 + np.maximum((1.0 - params.beta + margin) - np.asarray(fwp), 0.0)
                 / (1.0 - params.beta))
    return base + penalty * violation


def objective(params: DesignParams, bounds: Boundaries, n: float,
              cfg: SearchConfig | None = None, tol: float = 1e-6,
              seed: int = 0, threads: int | None = None) -> float:
    """Accurate objective of one design: what optimise() minimises.

    Resolving the default penalty solves the single-stage problem, so
    pass a config with penalty set when scoring many designs.
    """
    cfg = SearchConfig() if cfg is None else cfg
    penalty = _penalty_weight(params, cfg)
    configs = [null_config(params), make_delta_config(params, params.c)]
    chars = evaluate(params, bounds, n, configs=configs, tol=tol, seed=seed,
                     threads=threads)
    return float(_scored(
        chars.ess["null"], chars.ess[f"delta_{params.c}"],
        chars.fwer[params.a - 1], chars.fwp[(params.b, params.c, params.c)],
        n, params, cfg, penalty))


# -- candidate encoding --------------------------------------------------
# A candidate row is [n, f_1..f_{J-1}, e_1..e_J]; f_J is tied to e_J.

def _decode(X: np.ndarray, J: int):
    n = X[:, 0]
    e = X[:, J:2 * J]
    if J == 1:
        f = e
    else:
        f = np.concatenate([X[:, 1:J], X[:, 2 * J - 1:2 * J]], axis=1)
    return f, e, n


def _encode(bounds: Boundaries, n: float, J: int) -> np.ndarray:
    return np.array([n, *bounds.futility[:J - 1], *bounds.efficacy])


def _repair(X: np.ndarray, J: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Clip to the box and restore f_j < e_j at interim stages."""
    np.clip(X, lo, hi, out=X)
    for j in range(1, J):
        cf, ce = j, J - 1 + j
        fv, ev = X[:, cf], X[:, ce]
        low = np.minimum(fv, ev)
        high = np.maximum(fv, ev)
        low = np.where(high - low < 1e-9, high - 1e-9, low)
        X[:, cf] = low
        X[:, ce] = high
    return X


def _batch_objective(evaluator: BatchEvaluator, X: np.ndarray,
                     params: DesignParams, cfg: SearchConfig,
                     penalty: float) -> np.ndarray:
    f, e, n = _decode(X, params.J)
    r = evaluator.rates(f, e, n)
    return np.asarray(_scored(r.ess_null, r.ess_alt, r.fwer, r.fwp, n,
                              params, cfg, penalty, margin=_INNER_MARGIN))


def _run_replicate(evaluator: BatchEvaluator, params: DesignParams,
                   cfg: SearchConfig, lo: np.ndarray, hi: np.ndarray,
                   penalty: float, rep: int):
    J = params.J
    dim = 2 * J
    pop = cfg.population_size
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, rep)))

    X = lo + rng.random((pop, dim)) * (hi - lo)
    _repair(X, J, lo, hi)
    scores = _batch_objective(evaluator, X, params, cfg, penalty)
    best_i = int(np.argmin(scores))
    best_x, best_s = X[best_i].copy(), float(scores[best_i])
    trace = [best_s]

    stall = 0
    m = pop - 2
    for _ in range(cfg.max_iterations):
        children = np.empty_like(X)
        children[:2] = X[np.argsort(scores)[:2]]

        entrants = rng.integers(0, pop, size=(2, m, 3))
        winners = np.argmin(scores[entrants], axis=2)
        parents = entrants[np.arange(2)[:, None], np.arange(m)[None, :], winners]
        p1, p2 = X[parents[0]], X[parents[1]]

        low = np.minimum(p1, p2)
        span = np.maximum(p1, p2) - low
        blend = low - 0.5 * span + rng.random((m, dim)) * (2.0 * span)
        kids = np.where(rng.random((m, 1)) < 0.9, blend, p1)

        mutate = rng.random((m, dim)) < 0.2
        noise = rng.normal(0.0, 0.08, size=(m, dim)) * (hi - lo)
        children[2:] = np.where(mutate, kids + noise, kids)

        _repair(children, J, lo, hi)
        X = children
        scores = _batch_objective(evaluator, X, params, cfg, penalty)
        gen_i = int(np.argmin(scores))
        if scores[gen_i] < best_s - 1e-9:
            stall = 0
        else:
            stall += 1
        if scores[gen_i] < best_s:
            best_x, best_s = X[gen_i].copy(), float(scores[gen_i])
        trace.append(best_s)
        if stall >= cfg.stall_iterations:
            break
    return best_x, best_s, trace


def _resolve_boxes(params: DesignParams, cfg: SearchConfig) -> SearchConfig:
    """Fill in the penalty and the n box, solving J = 1 only if needed."""
    if cfg.penalty is not None and cfg.n_box is not None:
        return cfg
    n_fixed = float(compute_n_fixed(params))
    penalty = cfg.penalty if cfg.penalty is not None else n_fixed
    n_box = cfg.n_box if cfg.n_box is not None else \
        (1.0, max(2.0, 4.0 * n_fixed / (params.K + 1)))
    return replace(cfg, penalty=penalty, n_box=n_box)


def optimise(params: DesignParams, cfg: SearchConfig | None = None,
             threads: int | None = None) -> SearchResult:
    """Search for the design minimising the penalized objective.

    Runs cfg.replicates independent evolutionary searches, polishes the
    overall winner with a Nelder-Mead pass on the same fixed lattice,
    resolves the integer group size per cfg.integer_policy, and scores
    the final design with the accurate evaluator.  feasible reports
    whether that accurate check meets both error-rate targets (with a
    1e-4 slack); when every replicate ends up infeasible the least
    penalized design is still returned.
    """
    cfg = _resolve_boxes(params, SearchConfig() if cfg is None else cfg)
    penalty = float(cfg.penalty)
    J = params.J
    dim = 2 * J
    lo = np.array([cfg.n_box[0]] + [cfg.bound_box[0]] * (dim - 1))
    hi = np.array([cfg.n_box[1]] + [cfg.bound_box[1]] * (dim - 1))

    evaluator = BatchEvaluator(params, n_points=cfg.lattice_points,
                               n_shifts=cfg.lattice_shifts, seed=cfg.seed)
    best_x, best_s, trace = None, math.inf, None
    for rep in range(cfg.replicates):
        x, s, tr = _run_replicate(evaluator, params, cfg, lo, hi, penalty, rep)
        if s < best_s:
            best_x, best_s, trace = x, s, tr

    def polished(x: np.ndarray) -> float:
        row = _repair(x.copy()[None, :], J, lo, hi)
        return float(_batch_objective(evaluator, row, params, cfg, penalty)[0])

    nm = minimize(polished, best_x, method="Nelder-Mead",
                  options=dict(xatol=1e-5, fatol=1e-7, maxfev=200 * dim))
    if nm.fun < best_s:
        best_x, best_s = _repair(nm.x.copy()[None, :], J, lo, hi)[0], float(nm.fun)

    f, e, n = _decode(best_x[None, :], J)
    n_star = float(n[0])
    bounds_star = Boundaries(tuple(f[0]), tuple(e[0]))
    n_int, bounds_final = resolve_integer_n(params, bounds_star, n_star, cfg,
                                            _evaluator=evaluator)

    # full default configuration set, so the reported chars match what a
    # later evaluate() of the returned design produces at the same seed
    chars = evaluate(params, bounds_final, n_int, tol=1e-6,
                     seed=cfg.seed, threads=threads)
    fwer = chars.fwer[params.a - 1]
    fwp = chars.fwp[(params.b, params.c, params.c)]
    final_obj = float(_scored(
        chars.ess["null"], chars.ess[f"delta_{params.c}"], fwer, fwp,
        float(n_int), params, cfg, penalty))
    feasible = (fwer <= params.alpha + _FEASIBILITY_TOL
                and fwp >= 1.0 - params.beta - _FEASIBILITY_TOL)
    return SearchResult(n_star=n_star, n_integer=n_int, bounds=bounds_final,
                        objective=final_obj, chars=chars, trace=tuple(trace),
                        feasible=bool(feasible), config=cfg)


def resolve_integer_n(params: DesignParams, bounds: Boundaries, n_star: float,
                      cfg: SearchConfig | None = None,
                      _evaluator: BatchEvaluator | None = None):
    """Resolve a continuous group size to an integer-feasible one.

    Brackets n_star by the nearest sizes at which every cumulative
    allocation is a whole number of subjects.  The default policy
    re-optimises the boundaries at both bracket ends (group size held
    fixed) and keeps the better objective; policy 'up' returns the upper
    end with the boundaries untouched.
    """
    if not n_star > 0:
        raise ParameterError(f"n_star must be positive, got {n_star}")
    cfg = _resolve_boxes(params, SearchConfig() if cfg is None else cfg)
    penalty = float(cfg.penalty)
    step = params.n_step()
    n_l = (math.floor(n_star) // step) * step
    n_u = n_l + step
    cap = cfg.n_box[1]
    candidates = [n for n in (n_l, n_u) if step <= n <= max(cap, n_u)]
    if cfg.integer_policy == "up":
        if n_u > max(cap, n_u):  # pragma: no cover - cap always admits n_u
            raise InfeasibilityError("no integer-feasible group size in the box")
        return n_u, bounds
    if not candidates:
        raise InfeasibilityError("no integer-feasible group size in the box")

    evaluator = _evaluator if _evaluator is not None else BatchEvaluator(
        params, n_points=cfg.lattice_points, n_shifts=cfg.lattice_shifts,
        seed=cfg.seed)
    J = params.J
    dim = 2 * J
    lo = np.array([cfg.n_box[0]] + [cfg.bound_box[0]] * (dim - 1))
    hi = np.array([cfg.n_box[1]] + [cfg.bound_box[1]] * (dim - 1))
    x0 = _encode(bounds, n_star, J)

    best = None
    for n_int in candidates:
        def fixed_n_obj(y: np.ndarray, n_val=float(n_int)) -> float:
            row = np.concatenate(([n_val], y))[None, :]
            _repair(row, J, lo, hi)
            return float(_batch_objective(evaluator, row, params, cfg, penalty)[0])

        nm = minimize(fixed_n_obj, x0[1:], method="Nelder-Mead",
                      options=dict(xatol=1e-5, fatol=1e-7,
                                   maxfev=200 * max(dim - 1, 1)))
        row = _repair(np.concatenate(([float(n_int)], nm.x))[None, :], J, lo, hi)
        score = float(_batch_objective(evaluator, row, params, cfg, penalty)[0])
        if best is None or score < best[0]:
            f, e, _ = _decode(row, J)
            best = (score, n_int, Boundaries(tuple(f[0]), tuple(e[0])))
    return best[1], best[2]
