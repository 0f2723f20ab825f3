"""Monte Carlo simulation of trial conduct.

Serves as an independent oracle for the quadrature-based operating
characteristics and as a user-facing feature.  Responses enter only
through stagewise sufficient statistics, so each (replication, arm,
stage) triple costs one standard normal draw; the draw is produced by
inverse-CDF from a counter-based generator, with the stream position a
pure function of the triple's index.  Results are therefore identical
no matter how the replications are partitioned into chunks, and
reproducible from the seed alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .design import (Boundaries, DesignParams, EffectConfig, make_delta_config,
                     null_config, validate)
from .distribution import build_information
from .errors import ParameterError
from .outcomes import Outcome

__all__ = ["SimulationReport", "simulate_trial", "simulate_report"]

# Draws are laid out [replication][arm][stage], padded per replication
# to a whole number of 4-word generator blocks so chunk boundaries can
# be reached with exact counter jumps.
_TINY_U = 2.0 ** -53


def _draws_per_rep(K: int, J: int) -> int:
    need = (K + 1) * J
    return ((need + 3) // 4) * 4


def _rep_block(params: DesignParams, seed_entropy, start: int,
               count: int) -> np.ndarray:
    """Standard normals for replications [start, start+count), shaped
    (count, K+1, J)."""
    K, J = params.K, params.J
    D = _draws_per_rep(K, J)
    bit = np.random.Philox(seed=np.random.SeedSequence(seed_entropy))
    bit.advance(start * D // 4)
    u = np.random.Generator(bit).random(count * D).reshape(count, D)
    u = u[:, :(K + 1) * J].reshape(count, K + 1, J)
    return ndtri(np.maximum(u, _TINY_U))


def _conduct(params: DesignParams, bounds: Boundaries, n: float,
             tau, g: np.ndarray):
    """Apply the stagewise stopping rules to a block of normal draws.

    Returns integer arrays psi (rejections) and omega (stopping stages),
    both shaped (reps, K).
    """
    K, J, d = params.K, params.J, params.d
    R = params.ratio_matrix()
    counts = np.diff(R, axis=1, prepend=0.0) * n       # patients per stage
    sig = np.sqrt(np.asarray(params.sigma_sq))
    mu = np.concatenate(([0.0], np.asarray(tau, dtype=float)))

    # Cumulative response sums, then means and Wald statistics per stage.
    inc = mu[None, :, None] * counts[None, :, :] \
        + sig[None, :, None] * np.sqrt(counts)[None, :, :] * g
    means = np.cumsum(inc, axis=2) / (R[None, :, :] * n)
    z = (means[:, 1:, :] - means[:, :1, :]) \
        * np.sqrt(build_information(params, n))[None, :, :]

    reps = g.shape[0]
    psi = np.zeros((reps, K), dtype=np.int8)
    omega = np.zeros((reps, K), dtype=np.int8)
    active = np.ones((reps, K), dtype=bool)
    running = np.ones(reps, dtype=bool)
    f, e = bounds.futility, bounds.efficacy
    for j in range(1, J + 1):
        zj = z[:, :, j - 1]
        live = active & running[:, None]
        rej = live & (zj > e[j - 1])
        acc = live & (zj <= f[j - 1])
        psi[rej] = 1
        omega[rej | acc] = j
        active &= ~(rej | acc)
        stop = running & ((psi.sum(axis=1) >= d) | ~active.any(axis=1))
        pending = stop[:, None] & active
        omega[pending] = j
        active &= ~pending
        running &= ~stop
    assert not running.any()  # final stage forces a decision on every arm
    return psi, omega


def simulate_trial(params: DesignParams, bounds: Boundaries, n: float, tau,
                   rng: np.random.Generator) -> Outcome:
    """Run one trial and return its realized outcome.

    Consumes exactly (K+1) * J uniform draws from rng, one per arm and
    stage, in arm-major order.
    """
    _check(params, bounds, n)
    if len(tau) != params.K:
        raise ParameterError(f"tau must have K = {params.K} entries")
    u = rng.random((1, params.K + 1, params.J))
    g = ndtri(np.maximum(u, _TINY_U))
    psi, omega = _conduct(params, bounds, n, tau, g)
    return Outcome(tuple(psi[0]), tuple(omega[0]))


@dataclass(frozen=True)
class SimulationReport:
    """Aggregated simulation estimates, each with its standard error.

    fwer_hat holds (estimate, se) for at least p incorrect rejections,
    p = 1..K, computed from the all-null configuration when present.
    fwp_hat maps (p, q, r) to (estimate, se) for rejecting at least p of
    the first q arms under the configuration with the first r arms at
    delta.  ess_hat and max_n_hat map configuration labels to moments of
    the realized total sample size.  outcome_frequencies maps each label
    to the empirical outcome counts, which sum to the replication count.
    """

    replications: int
    fwer_hat: tuple[tuple[float, float], ...]
    fwp_hat: dict[tuple[int, int, int], tuple[float, float]]
    ess_hat: dict[str, tuple[float, float]]
    outcome_frequencies: dict[str, dict[Outcome, int]]

    def to_dict(self) -> dict:
        return {
            "replications": self.replications,
            "fwer_hat": [list(v) for v in self.fwer_hat],
            "fwp_hat": {f"{p}|{q}|{r}": list(v)
                        for (p, q, r), v in self.fwp_hat.items()},
            "ess_hat": {k: list(v) for k, v in self.ess_hat.items()},
            "outcome_frequencies": {
                label: {f"{o.psi}|{o.omega}": int(c) for o, c in counts.items()}
                for label, counts in self.outcome_frequencies.items()},
        }


def _check(params: DesignParams, bounds: Boundaries, n: float) -> None:
    report = validate(params, bounds)
    if not report.valid:
        raise ParameterError("; ".join(report.problems))
    if not n > 0:
        raise ParameterError(f"group size n must be positive, got {n!r}")
    R = params.ratio_matrix()
    sizes = R * n
    if not np.allclose(sizes, np.round(sizes), atol=1e-9):
        raise ParameterError(
            f"n = {n!r} gives fractional stage sizes for the given ratios")


def _delta_pattern(params: DesignParams, config: EffectConfig) -> int | None:
    """r such that config matches delta_r (first r arms at delta), else None."""
    for r in range(params.K + 1):
        if config.tau == make_delta_config(params, r).tau:
            return r
    return None


def simulate_report(params: DesignParams, bounds: Boundaries, n: float,
                    configs=None, replications: int = 10 ** 5, seed: int = 0,
                    chunk_size: int = 2 ** 16) -> SimulationReport:
    """Estimate the operating characteristics by simulation.

    Each effect configuration gets its own counter-based stream keyed by
    (seed, config index), partitioned into chunks of chunk_size
    replications; the estimates do not depend on chunk_size.
    """
    _check(params, bounds, n)
    if replications < 1:
        raise ParameterError("replications must be at least 1")
    if chunk_size < 1:
        raise ParameterError("chunk_size must be at least 1")
    if configs is None:
        configs = [null_config(params)] + [
            make_delta_config(params, r) for r in range(params.K + 1)]
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ParameterError("effect configuration labels must be unique")

    K, J = params.K, params.J
    R = params.ratio_matrix()
    fwer_hat = None
    fwp_hat: dict[tuple[int, int, int], tuple[float, float]] = {}
    ess_hat: dict[str, tuple[float, float]] = {}
    frequencies: dict[str, dict[Outcome, int]] = {}

    for idx, config in enumerate(configs):
        tau = np.asarray(config.tau)
        false_ge = np.zeros(K, dtype=np.int64)       # >= p wrong rejections
        prefix_ge = np.zeros((K, K), dtype=np.int64)  # [q-1, p-1]
        ss_sum = 0.0
        ss_sqsum = 0.0
        counts: dict[tuple, int] = {}

        done = 0
        while done < replications:
            take = min(chunk_size, replications - done)
            g = _rep_block(params, (seed, idx), done, take)
            psi, omega = _conduct(params, bounds, n, config.tau, g)
            done += take

            wrong = ((tau <= 0.0)[None, :] & (psi == 1)).sum(axis=1)
            for p in range(1, K + 1):
                false_ge[p - 1] += int((wrong >= p).sum())
            prefix = np.cumsum(psi, axis=1)
            for q in range(1, K + 1):
                for p in range(1, q + 1):
                    prefix_ge[q - 1, p - 1] += int((prefix[:, q - 1] >= p).sum())

            stages = np.maximum(omega, 1)
            ss = n * (R[0, omega.max(axis=1) - 1]
                      + R[np.arange(1, K + 1)[None, :], stages - 1].sum(axis=1))
            ss_sum += float(ss.sum())
            ss_sqsum += float((ss * ss).sum())

            keys = np.concatenate([psi, omega], axis=1)
            uniq, cnt = np.unique(keys, axis=0, return_counts=True)
            for row, c in zip(uniq, cnt):
                key = tuple(int(v) for v in row)
                counts[key] = counts.get(key, 0) + int(c)

        m = float(replications)
        if config.label == "null" or not tau.any():
            fwer_hat = tuple(
                (false_ge[p - 1] / m,
                 _prop_se(false_ge[p - 1] / m, m)) for p in range(1, K + 1))
        r = _delta_pattern(params, config)
        if r is not None and r > 0:
            for q in range(1, K + 1):
                for p in range(1, q + 1):
                    est = prefix_ge[q - 1, p - 1] / m
                    fwp_hat[(p, q, r)] = (est, _prop_se(est, m))
        mean = ss_sum / m
        var = max(ss_sqsum / m - mean * mean, 0.0)
        ess_hat[config.label] = (mean, math.sqrt(var / m))
        frequencies[config.label] = {
            Outcome(key[:K], key[K:]): c for key, c in sorted(counts.items())}

    if fwer_hat is None:
        fwer_hat = tuple((math.nan, math.nan) for _ in range(K))
    return SimulationReport(replications=replications, fwer_hat=fwer_hat,
                            fwp_hat=fwp_hat, ess_hat=ess_hat,
                            outcome_frequencies=frequencies)


def _prop_se(p: float, m: float) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / m)
