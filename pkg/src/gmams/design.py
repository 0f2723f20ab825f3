"""Design parameters, stopping boundaries and effect configurations.

A design compares K experimental arms against a shared control over at
most J stages.  Arm k recruits ``r[k][j] * n`` subjects by its j-th
analysis (cumulative), where ``n`` is the stage-1 control group size and
the allocation ratios ``r`` are exact rationals so that integer-n
feasibility can be decided without floating-point guesswork.

Vector quantities over arms are indexed 1..K throughout the package;
index 0 always refers to the control arm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ParameterError

__all__ = [
    "DesignParams",
    "Boundaries",
    "EffectConfig",
    "ValidationReport",
    "equal_cumulative_ratios",
    "make_delta_config",
    "null_config",
    "validate",
]


def _as_fraction(value) -> Fraction:
    """Convert a ratio entry (int, float, str like '3/2') to an exact Fraction.

    Floats are interpreted through their decimal string, so 0.1 means 1/10
    rather than the nearest binary double.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ParameterError(f"allocation ratio may not be boolean: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ParameterError(f"allocation ratio must be finite: {value!r}")
        return Fraction(str(value))
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ParameterError(f"cannot parse allocation ratio {value!r}") from exc
    raise ParameterError(f"cannot parse allocation ratio {value!r}")


def equal_cumulative_ratios(K: int, J: int) -> tuple[tuple[Fraction, ...], ...]:
    """The common choice r[k][j] = j for every arm including control."""
    row = tuple(Fraction(j) for j in range(1, J + 1))
    return tuple(row for _ in range(K + 1))


@dataclass(frozen=True)
class DesignParams:
    """Static problem statement: arms, stages, error targets and effects.

    Args:
        K: number of experimental arms (>= 1).
        J: maximum number of stages (>= 1).
        a: order of the generalised type-I error rate to control.
        b, c: familywise power counts the design targets rejecting at
            least b of the first c arms when those c arms all carry the
            interesting effect.
        d: number of rejections that terminates the trial (d = 1 stops
            everything at the first rejection, d = K runs each arm to its
            own conclusion).
        alpha, beta: error targets, both in (0, 1).
        delta: clinically interesting treatment effect (> delta0).
        delta0: uninteresting effect used for the arms beyond the first c.
        sigma_sq: K+1 response variances, control first.
        ratios: (K+1) x J cumulative allocation ratios, control row first;
            entries may be ints, floats, 'p/q' strings or Fractions.
    """

    K: int
    J: int
    a: int
    b: int
    c: int
    d: int
    alpha: float
    beta: float
    delta: float
    delta0: float
    sigma_sq: tuple[float, ...]
    ratios: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "sigma_sq", tuple(float(s) for s in self.sigma_sq))
        object.__setattr__(
            self,
            "ratios",
            tuple(tuple(_as_fraction(r) for r in row) for row in self.ratios),
        )
        problems = self._problems()
        if problems:
            raise ParameterError("; ".join(problems))

    def _problems(self) -> list[str]:
        p = []
        if not (isinstance(self.K, int) and self.K >= 1):
            p.append(f"K must be a positive integer, got {self.K!r}")
        if not (isinstance(self.J, int) and self.J >= 1):
            p.append(f"J must be a positive integer, got {self.J!r}")
        if p:
            return p
        K, J = self.K, self.J
        for name, lo, hi in (("a", 1, K), ("c", 1, K), ("d", 1, K)):
            v = getattr(self, name)
            if not (isinstance(v, int) and lo <= v <= hi):
                p.append(f"{name} must be an integer in [{lo}, {hi}], got {v!r}")
        if not (isinstance(self.b, int) and 1 <= self.b <= min(self.c, K)):
            p.append(f"b must be an integer in [1, c], got {self.b!r}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                p.append(f"{name} must lie in (0, 1), got {v!r}")
        if not (math.isfinite(self.delta) and self.delta > 0):
            p.append(f"delta must be positive, got {self.delta!r}")
        if not (math.isfinite(self.delta0) and self.delta0 < self.delta):
            p.append(f"delta0 must be finite and below delta, got {self.delta0!r}")
        if len(self.sigma_sq) != K + 1:
            p.append(f"sigma_sq needs K+1 = {K + 1} entries, got {len(self.sigma_sq)}")
        elif any(not (math.isfinite(s) and s > 0) for s in self.sigma_sq):
            p.append("every variance in sigma_sq must be finite and positive")
        if len(self.ratios) != K + 1 or any(len(row) != J for row in self.ratios):
            p.append(f"ratios must be a (K+1) x J = {K + 1} x {J} matrix")
        else:
            if self.ratios[0][0] != 1:
                p.append(f"control stage-1 ratio must equal 1, got {self.ratios[0][0]}")
            for k, row in enumerate(self.ratios):
                if any(r <= 0 for r in row):
                    p.append(f"ratios for arm {k} must be positive")
                if any(row[j] >= row[j + 1] for j in range(J - 1)):
                    p.append(f"ratios for arm {k} must increase strictly with stage")
        return p

    # -- convenience accessors -------------------------------------------

    @property
    def arms(self) -> range:
        """Experimental arm indices 1..K."""
        return range(1, self.K + 1)

    def ratio_matrix(self) -> np.ndarray:
        """Allocation ratios as a float (K+1) x J array, control row first."""
        return np.array([[float(r) for r in row] for row in self.ratios])

    def n_step(self) -> int:
        """Smallest positive integer L such that every multiple of L is an
        integer-feasible group size (all r[k][j] * n integral)."""
        L = 1
        for row in self.ratios:
            for r in row:
                L = math.lcm(L, r.denominator)
        return L

    def total_ratio(self, j: int) -> Fraction:
        """Sum of stage-j cumulative ratios over all K+1 arms."""
        return sum((row[j - 1] for row in self.ratios), Fraction(0))

    # -- serialization ---------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "DesignParams":
        if not isinstance(data, dict):
            raise ParameterError("design parameters must be a JSON object")
        required = {"K", "J", "a", "b", "c", "d", "alpha", "beta", "delta",
                    "delta0", "sigma_sq", "ratios"}
        missing = sorted(required - set(data))
        if missing:
            raise ParameterError(f"missing design parameter fields: {', '.join(missing)}")
        unknown = sorted(set(data) - required)
        if unknown:
            raise ParameterError(f"unknown design parameter fields: {', '.join(unknown)}")
        K, J = data["K"], data["J"]
        if not (isinstance(K, int) and isinstance(J, int)):
            raise ParameterError("K and J must be integers")
        ratios = data["ratios"]
        if ratios == "equal-cumulative":
            ratios = equal_cumulative_ratios(K, J)
        return cls(
            K=K, J=J, a=data["a"], b=data["b"], c=data["c"], d=data["d"],
            alpha=float(data["alpha"]), beta=float(data["beta"]),
            delta=float(data["delta"]), delta0=float(data["delta0"]),
            sigma_sq=tuple(data["sigma_sq"]),
            ratios=ratios,
        )

    def to_dict(self) -> dict:
        def fmt(r: Fraction):
            return int(r) if r.denominator == 1 else f"{r.numerator}/{r.denominator}"

        return {
            "K": self.K, "J": self.J, "a": self.a, "b": self.b, "c": self.c,
            "d": self.d, "alpha": self.alpha, "beta": self.beta,
            "delta": self.delta, "delta0": self.delta0,
            "sigma_sq": list(self.sigma_sq),
            "ratios": [[fmt(r) for r in row] for row in self.ratios],
        }


@dataclass(frozen=True)
class Boundaries:
    """Futility (f) and efficacy (e) boundaries, one pair per stage.

    At interim stage j an active arm stops for efficacy when Z > e[j],
    stops for futility when Z <= f[j], and continues otherwise.  -inf and
    +inf are legal interim entries and switch the corresponding stopping
    rule off; the final pair must be finite with f[J] == e[J] so every
    arm reaching stage J comes to a decision.
    """

    futility: tuple[float, ...]
    efficacy: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "futility", tuple(float(x) for x in self.futility))
        object.__setattr__(self, "efficacy", tuple(float(x) for x in self.efficacy))

    @property
    def stages(self) -> int:
        return len(self.futility)

    def all_finite(self) -> bool:
        return all(map(math.isfinite, self.futility + self.efficacy))

    @classmethod
    def from_dict(cls, data: dict) -> "Boundaries":
        try:
            return cls(tuple(data["futility"]), tuple(data["efficacy"]))
        except (KeyError, TypeError) as exc:
            raise ParameterError("boundaries need 'futility' and 'efficacy' arrays") from exc

    def to_dict(self) -> dict:
        return {"futility": list(self.futility), "efficacy": list(self.efficacy)}


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validate(): which invariants fail, at which strictness.

    problems lists violations of the working boundary set (trial conduct
    is well defined iff it is empty); prime_problems additionally lists
    what keeps the boundaries out of the all-finite subset that the
    search optimises over.
    """

    problems: tuple[str, ...]
    prime_problems: tuple[str, ...]

    @property
    def valid(self) -> bool:
        return not self.problems

    @property
    def valid_prime(self) -> bool:
        return not self.problems and not self.prime_problems


def validate(params: DesignParams, bounds: Boundaries) -> ValidationReport:
    """Check boundaries against a parameter set without raising.

    Returns a report listing every violated invariant, so callers (and
    the CLI) can show all defects at once.
    """
    problems: list[str] = []
    J = params.J
    f, e = bounds.futility, bounds.efficacy
    if len(f) != J or len(e) != J:
        problems.append(f"boundaries must have J = {J} stages, got {len(f)}/{len(e)}")
        return ValidationReport(tuple(problems), ())
    for j in range(J):
        if math.isnan(f[j]) or math.isnan(e[j]):
            problems.append(f"stage {j + 1} boundary is NaN")
    for j in range(J - 1):
        if not f[j] < e[j]:
            problems.append(
                f"interim stage {j + 1} needs f < e, got f={f[j]!r}, e={e[j]!r}"
            )
    if f[J - 1] != e[J - 1]:
        problems.append(f"final stage needs f = e, got f={f[J - 1]!r}, e={e[J - 1]!r}")
    if not (math.isfinite(f[J - 1]) and math.isfinite(e[J - 1])):
        problems.append("final-stage boundary must be finite")
    prime = tuple(
        f"stage {j + 1} {name} boundary is not finite"
        for j, values in ((j, (f[j], e[j])) for j in range(J))
        for name, v in zip(("futility", "efficacy"), values)
        if not math.isfinite(v)
    )
    return ValidationReport(tuple(problems), prime)


@dataclass(frozen=True)
class EffectConfig:
    """A named vector of true treatment effects, one entry per arm 1..K."""

    tau: tuple[float, ...]
    label: str

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        if any(math.isnan(t) for t in self.tau):
            raise ParameterError("effect vector may not contain NaN")


def null_config(params: DesignParams) -> EffectConfig:
    """The global null: every arm at zero effect."""
    return EffectConfig((0.0,) * params.K, "null")


def make_delta_config(params: DesignParams, r: int) -> EffectConfig:
    """Effect vector with the first r arms at delta and the rest at delta0."""
    if not 0 <= r <= params.K:
        raise ParameterError(f"r must lie in [0, K], got {r}")
    tau = (params.delta,) * r + (params.delta0,) * (params.K - r)
    return EffectConfig(tau, f"delta_{r}")
