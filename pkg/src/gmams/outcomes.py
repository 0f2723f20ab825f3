"""Enumeration of trial outcomes and their integration regions.

A trial outcome records, per experimental arm, whether its null
hypothesis was rejected (psi) and at which stage the arm stopped
(omega).  The full outcome space is generated by recursively simulating
the conduct rules stage by stage, never from closed-form counts; the
closed forms below exist to cross-check the enumeration.

When several arms are statistically interchangeable (same true effect,
variance and allocation), the space collapses to order-reduced
representatives whose per-block stop codes are nonincreasing, each
carrying a multiplicity (degeneracy) equal to the number of full
outcomes it stands for.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import chain, combinations, product
from math import comb, factorial, prod

from .design import Boundaries, DesignParams
from .errors import ParameterError
from .mvn import Rectangle

__all__ = [
    "Outcome",
    "WeightedOutcome",
    "enumerate_xi",
    "enumerate_xi_prime",
    "cardinality_xi",
    "cardinality_xi_prime",
    "build_rectangle",
    "interchangeable_blocks",
]


@dataclass(frozen=True)
class Outcome:
    """Per-arm rejection flags and stopping stages, arms ordered 1..K."""

    psi: tuple[int, ...]
    omega: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "psi", tuple(int(p) for p in self.psi))
        object.__setattr__(self, "omega", tuple(int(w) for w in self.omega))
        if len(self.psi) != len(self.omega):
            raise ParameterError("psi and omega lengths differ")
        if any(p not in (0, 1) for p in self.psi):
            raise ParameterError("psi entries must be 0 or 1")
        if any(w < 1 for w in self.omega):
            raise ParameterError("omega entries must be positive stages")

    @property
    def K(self) -> int:
        return len(self.psi)

    @property
    def stop_stage(self) -> int:
        return max(self.omega)

    @property
    def rejections(self) -> int:
        return sum(self.psi)

    def sort_key(self):
        return (self.stop_stage, self.psi, self.omega)


@dataclass(frozen=True)
class WeightedOutcome:
    """An order-reduced representative outcome and its multiplicity."""

    outcome: Outcome
    degeneracy: int


def _check_djk(d: int, J: int, K: int):
    if not (isinstance(K, int) and K >= 1):
        raise ParameterError(f"K must be a positive integer, got {K!r}")
    if not (isinstance(J, int) and J >= 1):
        raise ParameterError(f"J must be a positive integer, got {J!r}")
    if not (isinstance(d, int) and 1 <= d <= K):
        raise ParameterError(f"d must be an integer in [1, K], got {d!r}")


def _subsets(items):
    return chain.from_iterable(combinations(items, r) for r in range(len(items) + 1))


def enumerate_xi(d: int, J: int, K: int, bounds: Boundaries | None = None) -> list[Outcome]:
    """All outcomes the conduct rules can produce, in a canonical order.

    bounds only matters through which stopping rules exist at each
    interim: an infinite efficacy boundary at stage j removes every
    outcome with a rejection there, an infinite futility boundary
    removes interim acceptances (outside trial termination).  Omitting
    bounds assumes all rules are available.

    The result is sorted by (stop stage, psi, omega) so output files are
    reproducible.
    """
    _check_djk(d, J, K)
    if bounds is None:
        efficacy_on = [True] * J
        futility_on = [True] * J
    else:
        if bounds.stages != J:
            raise ParameterError(f"boundaries have {bounds.stages} stages, expected {J}")
        efficacy_on = [e < math.inf for e in bounds.efficacy]
        futility_on = [f > -math.inf for f in bounds.futility]

    out: list[Outcome] = []
    psi = [0] * K
    omega = [0] * K

    def emit(decided, stage, rejected_set):
        for k in decided:
            psi[k - 1] = 1 if k in rejected_set else 0
            omega[k - 1] = stage
        out.append(Outcome(tuple(psi), tuple(omega)))

    def run(stage: int, active: tuple[int, ...], rejected: int):
        if stage == J:
            # Final analysis: every remaining arm rejects or accepts.
            for reject_set in _subsets(active):
                emit(active, stage, set(reject_set))
            return
        reject_options = _subsets(active) if efficacy_on[stage - 1] else [()]
        for reject_set in reject_options:
            now_rejected = rejected + len(reject_set)
            rest = tuple(k for k in active if k not in reject_set)
            if now_rejected >= d:
                # d-th rejection reached: the trial terminates here and
                # every other active arm stops without rejection.
                emit(active, stage, set(reject_set))
                continue
            accept_options = _subsets(rest) if futility_on[stage - 1] else [()]
            for accept_set in accept_options:
                carriers = tuple(k for k in rest if k not in accept_set)
                if carriers:
                    for k in reject_set:
                        psi[k - 1], omega[k - 1] = 1, stage
                    for k in accept_set:
                        psi[k - 1], omega[k - 1] = 0, stage
                    run(stage + 1, carriers, now_rejected)
                else:
                    emit(active, stage, set(reject_set))

    run(1, tuple(range(1, K + 1)), 0)
    out.sort(key=Outcome.sort_key)
    return out


def _block_codes(outcome: Outcome, block: tuple[int, ...]) -> tuple[int, ...]:
    # Stop code 2w - 1(psi=0): rejections rank above acceptances at the
    # same stage, later stages above earlier ones.
    return tuple(
        2 * outcome.omega[k - 1] - (1 - outcome.psi[k - 1]) for k in block
    )


def _is_reduced(outcome: Outcome, blocks) -> bool:
    for block in blocks:
        codes = _block_codes(outcome, block)
        if any(codes[i] < codes[i + 1] for i in range(len(codes) - 1)):
            return False
    return True


def _degeneracy(outcome: Outcome, blocks) -> int:
    weight = 1
    for block in blocks:
        codes = _block_codes(outcome, block)
        mult = {}
        for code in codes:
            mult[code] = mult.get(code, 0) + 1
        weight *= factorial(len(block)) // prod(factorial(m) for m in mult.values())
    return weight


def _check_blocks(blocks, K: int):
    seen = sorted(k for block in blocks for k in block)
    if seen != list(range(1, K + 1)):
        raise ParameterError(f"blocks must partition arms 1..{K}, got {blocks!r}")


def enumerate_xi_prime(d: int, J: int, K: int, blocks,
                       bounds: Boundaries | None = None) -> list[WeightedOutcome]:
    """Order-reduced outcome space for the given interchangeable arm blocks.

    blocks is a partition of 1..K into groups of arms that share true
    effect, variance and allocation; outcomes are kept when each block's
    stop codes are nonincreasing in arm order, weighted by the count of
    full outcomes in their permutation class.
    """
    _check_djk(d, J, K)
    blocks = tuple(tuple(block) for block in blocks)
    _check_blocks(blocks, K)
    full = enumerate_xi(d, J, K, bounds)
    return [
        WeightedOutcome(o, _degeneracy(o, blocks))
        for o in full
        if _is_reduced(o, blocks)
    ]


def cardinality_xi(d: int, J: int, K: int) -> int:
    """Closed-form size of the full outcome space for all-finite boundaries."""
    _check_djk(d, J, K)
    total = 0

    def rec(stage: int, remaining: int, rejected: int, ways: int):
        nonlocal total
        total += ways * 2 ** remaining
        if stage == J:
            return
        for stop_now in range(remaining):
            for rej_now in range(min(stop_now, d - 1 - rejected) + 1):
                rec(stage + 1, remaining - stop_now, rejected + rej_now,
                    ways * comb(remaining, stop_now) * comb(stop_now, rej_now))

    rec(1, K, 0, 1)
    return total


def cardinality_xi_prime(d: int, J: int, K: int, block_sizes) -> int:
    """Closed-form size of the reduced space for the given block sizes."""
    _check_djk(d, J, K)
    sizes = tuple(int(s) for s in block_sizes if int(s) > 0)
    if sum(sizes) != K:
        raise ParameterError(f"block sizes must sum to K = {K}, got {block_sizes!r}")
    total = 0

    def rec(stage: int, remaining: tuple[int, ...], rejected: int):
        nonlocal total
        total += prod(m + 1 for m in remaining)
        if stage == J:
            return
        for stops in product(*(range(m + 1) for m in remaining)):
            if sum(stops) == sum(remaining):
                continue
            for rejs in product(*(range(s + 1) for s in stops)):
                if rejected + sum(rejs) > d - 1:
                    continue
                rec(stage + 1,
                    tuple(m - s for m, s in zip(remaining, stops)),
                    rejected + sum(rejs))

    rec(1, sizes, 0)
    return total


def build_rectangle(outcome: Outcome, bounds: Boundaries,
                    d: int) -> tuple[Rectangle, tuple[tuple[int, int], ...]]:
    """Integration region whose probability is the outcome's probability.

    Returns the rectangle together with the (arm, stage) pairs it covers,
    ordered stage-major to match the stacked statistic vector.  Each arm
    contributes one coordinate per stage it was observed at: continuation
    cells before its stop stage, then the deciding cell, whose shape
    depends on whether the arm rejected, accepted, or was cut off by the
    trial reaching d rejections at that analysis.
    """
    K = outcome.K
    J = bounds.stages
    if outcome.stop_stage > J:
        raise ParameterError("outcome uses more stages than the boundaries have")
    if not (isinstance(d, int) and 1 <= d <= K):
        raise ParameterError(f"d must be an integer in [1, K], got {d!r}")
    f, e = bounds.futility, bounds.efficacy
    stop_stage = outcome.stop_stage
    terminated = outcome.rejections >= d

    active: list[tuple[int, int]] = []
    lower: list[float] = []
    upper: list[float] = []
    for j in range(1, J + 1):
        for k in range(1, K + 1):
            w = outcome.omega[k - 1]
            if j > w:
                continue
            active.append((k, j))
            if j < w:
                lower.append(f[j - 1])
                upper.append(e[j - 1])
            elif outcome.psi[k - 1] == 1:
                lower.append(e[j - 1])
                upper.append(math.inf)
            elif w == stop_stage and terminated:
                # The trial hit d rejections at this analysis, so a
                # non-rejecting arm only had to stay below the efficacy
                # boundary; whether it also crossed futility is moot.
                lower.append(-math.inf)
                upper.append(e[j - 1])
            else:
                lower.append(-math.inf)
                upper.append(f[j - 1])
    return Rectangle(tuple(lower), tuple(upper)), tuple(active)


def interchangeable_blocks(params: DesignParams, tau) -> tuple[tuple[tuple[int, ...], ...], bool]:
    """Arm blocks sharing a true effect, plus whether reduction is sound.

    Arms are grouped by equal tau.  The reduction additionally needs each
    group to share its variance and allocation row; the boolean is False
    when that fails, in which case callers should score the full space.
    """
    if hasattr(tau, "tau"):
        tau = tau.tau
    tau = tuple(float(t) for t in tau)
    if len(tau) != params.K:
        raise ParameterError(f"tau needs {params.K} entries, got {len(tau)}")
    groups: dict[float, list[int]] = {}
    for k in range(1, params.K + 1):
        groups.setdefault(tau[k - 1], []).append(k)
    blocks = tuple(tuple(v) for _, v in sorted(groups.items(), key=lambda kv: kv[1][0]))
    ok = all(
        params.sigma_sq[k] == params.sigma_sq[block[0]]
        and params.ratios[k] == params.ratios[block[0]]
        for block in blocks
        for k in block
    )
    return blocks, ok


def reduced_or_full(params: DesignParams, tau, bounds: Boundaries | None = None
                    ) -> list[WeightedOutcome]:
    """Reduced outcome space when interchangeability holds, else the full
    space with unit weights (with a warning, since that is usually much
    slower)."""
    blocks, ok = interchangeable_blocks(params, tau)
    if ok:
        return enumerate_xi_prime(params.d, params.J, params.K, blocks, bounds)
    warnings.warn(
        "arms with equal effects differ in variance or allocation; "
        "scoring the full outcome space without reduction",
        stacklevel=2,
    )
    full = enumerate_xi(params.d, params.J, params.K, bounds)
    return [WeightedOutcome(o, 1) for o in full]
