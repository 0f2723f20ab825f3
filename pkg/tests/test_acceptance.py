"""Release gate.

Eight checks, one test each, every one printing a single PASS/FAIL
summary line.  They pin the package against its reference values: the
outcome-space cardinality table, the 54 published reference designs, a
million-replication simulation oracle, the order-reduction identity,
search and calibration quality, property suites, and the single-stage
formula.  Tolerances are part of the contract and are not to be widened;
a check that cannot be met from the printed reference inputs fails
honestly (see test_criterion_2_reference_tables).
"""
import dataclasses
import math
import time
from collections import defaultdict

import numpy as np
import pytest

from gmams import (Boundaries, DesignParams, SearchConfig, compute_n_fixed,
                   calibrate_triangular, cardinality_xi, cardinality_xi_prime,
                   enumerate_xi, enumerate_xi_prime, equal_cumulative_ratios,
                   evaluate, make_delta_config, null_config, objective,
                   optimise, outcome_probabilities, simulate_report,
                   single_stage_design)

from reference_designs import (FWP_PAIRS, REFERENCE_DESIGNS, REFERENCE_POWER,
                               tailor_params)


def report(num: int, ok: bool, detail: str) -> None:
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}")


# --------------------------------------------------------------------------
# 1. cardinalities of the full and order-reduced outcome spaces
# --------------------------------------------------------------------------

# (d, K) -> {J: (|full|, |reduced under a single block|)}
CARDINALITIES = {
    (1, 2): {2: (12, 8), 3: (24, 15), 4: (40, 24)},
    (2, 2): {2: (16, 10), 3: (36, 21), 4: (64, 36)},
    (1, 3): {2: (34, 13), 3: (90, 29), 4: (188, 54)},
    (2, 3): {2: (58, 18), 3: (186, 48), 4: (428, 100)},
    (3, 3): {2: (64, 20), 3: (216, 56), 4: (512, 120)},
    (1, 4): {2: (96, 19), 3: (336, 49), 4: (880, 104)},
    (2, 4): {2: (200, 28), 3: (888, 90), 4: (2608, 220)},
    (3, 4): {2: (248, 33), 3: (1224, 116), 4: (3808, 300)},
    (4, 4): {2: (256, 35), 3: (1296, 126), 4: (4096, 330)},
}


def test_criterion_1_cardinalities():
    t0 = time.perf_counter()
    checked = 0
    for (d, K), by_stage in CARDINALITIES.items():
        for J, (n_full, n_reduced) in by_stage.items():
            assert cardinality_xi(d, J, K) == n_full, (d, J, K)
            assert cardinality_xi_prime(d, J, K, (K,)) == n_reduced, (d, J, K)
            full = enumerate_xi(d, J, K)
            assert len(full) == n_full, (d, J, K)
            reduced = enumerate_xi_prime(d, J, K, (tuple(range(1, K + 1)),))
            assert len(reduced) == n_reduced, (d, J, K)
            assert sum(w.degeneracy for w in reduced) == n_full, (d, J, K)
            checked += 2
    dt = time.perf_counter() - t0
    report(1, True, f"{checked} cardinality entries exact, "
                    f"closed form and enumeration agree ({dt:.2f}s)")
    assert dt < 5.0


# --------------------------------------------------------------------------
# 2. the 54 reference designs
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_2_reference_tables():
    """Reproduce every printed FWER_I / FWP entry within +-0.002 and every
    ESS entry within +-0.3, from the printed (n, f, e).

    Known discrepancy: five ESS entries (two in row 1/1/1/1 and one in
    each of 1/2/2/1, 1/3/3/2, 1/3/3/3) are 0.32-0.40 off.  Interval
    arithmetic over the rounding box
    of the printed boundaries shows those printed values are unattainable
    for ANY design consistent with the printed inputs, and a 4M-replication
    Monte Carlo run at the printed values sides with the quadrature.  The
    reference entries were evidently computed from unrounded boundaries, so
    this check fails on exactly those entries rather than widening its
    tolerance.
    """
    failures = []
    times = defaultdict(float)
    chars_by_key = {}
    for key in sorted(REFERENCE_DESIGNS):
        a = key[0]
        n, f, e, want_fwer, want_ess = REFERENCE_DESIGNS[key]
        params = tailor_params(*key)
        t0 = time.perf_counter()
        chars = evaluate(params, Boundaries(f, e), n, tol=1e-6, seed=0,
                         threads=4)
        times[a] += time.perf_counter() - t0
        chars_by_key[key] = chars
        name = "/".join(map(str, key))
        for p in (1, 2, 3):
            got = chars.fwer[p - 1]
            if abs(got - want_fwer[p - 1]) > 2e-3:
                failures.append(f"{name} FWER_I({p}): {got:.4f} "
                                f"vs {want_fwer[p - 1]}")
        ess = [chars.ess["null"]] + [chars.ess[f"delta_{r}"] for r in (1, 2, 3)]
        for i, want in enumerate(want_ess):
            if abs(ess[i] - want) > 0.3:
                failures.append(f"{name} ESS[{i}]: {ess[i]:.2f} vs {want}")
        for (p, q), want in zip(FWP_PAIRS, REFERENCE_POWER[key]):
            got = chars.fwp[(p, q, q)]
            if abs(got - want) > 2e-3:
                failures.append(f"{name} FWP({p},{q}): {got:.4f} vs {want}")

    n_fwer = sum("FWER" in m for m in failures)
    n_fwp = sum("FWP" in m for m in failures)
    n_ess = sum("ESS" in m for m in failures)

    anchors = [
        ("FWER_I(2) of 2/1/1/1", chars_by_key[(2, 1, 1, 1)].fwer[1],
         0.050, 2e-3),
        ("ESS(0_K) of 2/1/1/1", chars_by_key[(2, 1, 1, 1)].ess["null"],
         154.7, 0.3),
        ("FWER_I(1) of 1/1/1/1", chars_by_key[(1, 1, 1, 1)].fwer[0],
         0.050, 2e-3),
        ("FWP(1,1) of 2/1/1/1", chars_by_key[(2, 1, 1, 1)].fwp[(1, 1, 1)],
         0.909, 2e-3),
        ("n of 1/1/1/1", REFERENCE_DESIGNS[(1, 1, 1, 1)][0], 40, 0),
    ]
    for name, got, want, slack in anchors:
        if abs(got - want) > slack:
            failures.append(f"anchor {name}: {got:.4f} vs {want}")

    slow = {a: t for a, t in times.items() if t >= 60.0}
    detail = (f"{3 * 54 - n_fwer}/162 FWER, {6 * 54 - n_fwp}/324 FWP, "
              f"{4 * 54 - n_ess}/216 ESS entries in tolerance; "
              f"time per design group "
              f"{dict((a, round(t, 1)) for a, t in sorted(times.items()))}s")
    report(2, not failures and not slow, detail)
    assert not slow, f"design groups over the 60s budget: {slow}"
    assert not failures, "out-of-tolerance entries:\n" + "\n".join(failures)


# --------------------------------------------------------------------------
# 3. simulation oracle at one million replications
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_3_simulation_oracle():
    keys = [(1, 1, 1, 1), (2, 1, 1, 2), (3, 1, 1, 3),
            (1, 1, 2, 3), (2, 2, 2, 1), (3, 1, 3, 2)]
    assert {k[0] for k in keys} == {1, 2, 3}
    assert {k[3] for k in keys} == {1, 2, 3}
    m = 10 ** 6
    misses = []
    for key in keys:
        a, b, c, d = key
        n, f, e, _, _ = REFERENCE_DESIGNS[key]
        params = tailor_params(*key)
        bounds = Boundaries(f, e)
        configs = [null_config(params), make_delta_config(params, c)]
        sim = simulate_report(params, bounds, n, configs=configs,
                              replications=m, seed=11)
        quad = evaluate(params, bounds, n, configs=configs, tol=1e-7,
                        seed=1, threads=4)
        name = "/".join(map(str, key))

        def check(what, got, se, want):
            if abs(got - want) > 4 * se:
                misses.append(f"{name} {what}: sim {got:.5f} (se {se:.5f}) "
                              f"vs quad {want:.5f}")

        est, se = sim.fwer_hat[a - 1]
        check(f"FWER_I({a})", est, se, quad.fwer[a - 1])
        est, se = sim.fwp_hat[(b, c, c)]
        check(f"FWP({b},{c})", est, se, quad.fwp[(b, c, c)])
        for label in ("null", f"delta_{c}"):
            est, se = sim.ess_hat[label]
            check(f"ESS[{label}]", est, se, quad.ess[label])
    report(3, not misses,
           f"{6 * 4 - len(misses)}/24 estimates within 4 SE at 10^6 reps")
    assert not misses, "\n".join(misses)


# --------------------------------------------------------------------------
# 4. order-reduction identity over the whole small-design lattice
# --------------------------------------------------------------------------


def _aggregate(params, n, tau, pairs, q_values):
    """FWER/FWP/ESS sums recomputed here from the raw cells, so both the
    reduced and the full paths are folded by the same independent code."""
    K = params.K
    R = np.asarray(params.ratio_matrix(), dtype=float)
    fwer = np.zeros(K)
    fwp = {}
    ess = 0.0
    total = 0.0
    for wo, res in pairs:
        w = wo.degeneracy * res.value
        o = wo.outcome
        total += w
        wrong = sum(1 for k in range(K) if o.psi[k] and tau[k] <= 0.0)
        if wrong:
            fwer[:wrong] += w
        for q in q_values:
            hits = sum(o.psi[:q])
            for p in range(1, hits + 1):
                fwp[(p, q)] = fwp.get((p, q), 0.0) + w
        stop = max(o.omega)
        mult = R[0, stop - 1] + sum(R[k, o.omega[k - 1] - 1]
                                    for k in range(1, K + 1))
        ess += w * n * mult
    return fwer, fwp, ess, total


@pytest.mark.slow
def test_criterion_4_reduction_identity():
    t0 = time.perf_counter()
    worst = 0.0
    cases = 0
    for K in (1, 2, 3):
        for J in (1, 2, 3):
            c = (K + 1) // 2
            f = tuple(-0.4 + 0.2 * j for j in range(1, J)) + (1.1,)
            e = tuple(2.4 - 0.2 * j for j in range(1, J)) + (1.1,)
            bounds = Boundaries(f, e)
            n = 20
            for d in range(1, K + 1):
                params = DesignParams(
                    K=K, J=J, a=1, b=1, c=c, d=d, alpha=0.05, beta=0.1,
                    delta=0.545, delta0=0.138, sigma_sq=(1.0,) * (K + 1),
                    ratios=equal_cumulative_ratios(K, J))
                for tau in [(0.0,) * K,
                            (0.545,) * c + (0.138,) * (K - c)]:
                    red = outcome_probabilities(params, bounds, n, tau,
                                                tol=1e-6, seed=3)
                    full = outcome_probabilities(params, bounds, n, tau,
                                                 tol=1e-6, seed=3,
                                                 reduced=False)
                    assert sum(w.degeneracy for w, _ in red) == len(full)
                    # FWP(p, q) is reconstructible from the reduced space
                    # only when q does not split an interchangeability
                    # block of this tau
                    q_values = [K] if len(set(tau)) == 1 \
                        else sorted({c, K})
                    scale = n * float(params.total_ratio(J))
                    ga = _aggregate(params, n, tau, red, q_values)
                    gb = _aggregate(params, n, tau, full, q_values)
                    deltas = (
                        [abs(x - y) for x, y in zip(ga[0], gb[0])]
                        + [abs(ga[1].get(k, 0.0) - gb[1].get(k, 0.0))
                           for k in gb[1]]
                        + [abs(ga[2] - gb[2]) / scale, abs(ga[3] - gb[3])])
                    worst = max(worst, max(deltas))
                    cases += 1
                    assert max(deltas) <= 2e-5, (K, J, d, tau, max(deltas))
    dt = time.perf_counter() - t0
    report(4, True, f"{cases} (K,J,d,tau) cases; degeneracy counts exact, "
                    f"worst sum deviation {worst:.2e} ({dt:.0f}s)")


# --------------------------------------------------------------------------
# 5. search quality on the reference scenario
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_search_quality():
    t0 = time.perf_counter()
    params = tailor_params(2, 1, 1, 1)
    cfg = SearchConfig(penalty=10.0 * compute_n_fixed(params),
                       population_size=80, replicates=2,
                       stall_iterations=50, seed=1)
    res = optimise(params, cfg)
    published = objective(params, Boundaries((0.08, 1.31), (1.70, 1.31)),
                          27, cfg)
    ratio = res.objective / published

    params1 = tailor_params(1, 1, 1, 1)
    cfg1 = dataclasses.replace(cfg, penalty=10.0 * compute_n_fixed(params1))
    res1 = optimise(params1, cfg1)
    dt = time.perf_counter() - t0

    ok = (res.feasible and res.chars.fwer[1] <= 0.0501
          and res.chars.fwp[(1, 1, 1)] >= 0.8999 and ratio <= 1.02
          and abs(res1.n_integer - 40) <= 1 and dt <= 900)
    report(5, ok, f"a=2: feasible={res.feasible}, n={res.n_integer}, "
                  f"objective {ratio:.4f}x published; "
                  f"a=1: n={res1.n_integer} (want 40+-1); {dt:.0f}s")
    assert res.feasible
    assert res.chars.fwer[1] <= 0.0501
    assert res.chars.fwp[(1, 1, 1)] >= 0.8999
    assert ratio <= 1.02
    assert abs(res1.n_integer - 40) <= 1
    assert dt <= 900


# --------------------------------------------------------------------------
# 6. triangular calibration
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_6_triangular_calibration():
    misses = []
    for a in (1, 2, 3):
        params = tailor_params(a, 1, 1, 1)
        design = calibrate_triangular(params, seed=0)
        chars = evaluate(params, design.bounds, design.n, tol=1e-7, seed=7)
        if abs(chars.fwer[a - 1] - 0.05) > 1e-3:
            misses.append(f"a={a}: FWER_I({a}) = {chars.fwer[a - 1]:.5f}")
        if abs(chars.fwp[(1, 1, 1)] - 0.90) > 1e-3:
            misses.append(f"a={a}: FWP(1,1) = {chars.fwp[(1, 1, 1)]:.5f}")
        if not design.residual <= 1e-6:
            misses.append(f"a={a}: residual = {design.residual:.2e}")
    report(6, not misses,
           "FWER_I(a) = 0.05 +- 0.001 and FWP(1,1) = 0.90 +- 0.001 "
           "for a in {1,2,3}" if not misses else "; ".join(misses))
    assert not misses, misses


# --------------------------------------------------------------------------
# 7. normalization and monotonicity over randomized designs
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_property_suites():
    rng = np.random.default_rng(2026)
    noise = 2e-6  # per-cell quadrature tolerance can leak into the sums
    worst_mass = 0.0
    for i in range(50):
        K = int(rng.integers(1, 4))
        J = int(rng.integers(1, 4))
        d = int(rng.integers(1, K + 1))
        c = int(rng.integers(1, K + 1))
        b = int(rng.integers(1, c + 1))
        a = int(rng.integers(1, K + 1))
        params = DesignParams(
            K=K, J=J, a=a, b=b, c=c, d=d, alpha=0.05, beta=0.1,
            delta=float(rng.uniform(0.3, 0.8)),
            delta0=float(rng.uniform(0.0, 0.2)),
            sigma_sq=tuple(float(v) for v in rng.uniform(0.5, 2.0, K + 1)),
            ratios=equal_cumulative_ratios(K, J))
        t = float(rng.uniform(0.8, 2.2))
        uf = float(rng.uniform(0.3, 1.2))
        ue = float(rng.uniform(0.3, 1.2))
        bounds = Boundaries(
            futility=tuple(t - (J - j) * uf for j in range(1, J + 1)),
            efficacy=tuple(t + (J - j) * ue for j in range(1, J + 1)))
        n = int(rng.integers(8, 41))
        r = int(rng.integers(1, K + 1))
        chars = evaluate(params, bounds, n,
                         configs=[null_config(params),
                                  make_delta_config(params, r)],
                         tol=1e-6, seed=i, reduced=False)
        for label, mass in chars.total_probability.items():
            worst_mass = max(worst_mass, abs(mass - 1.0))
            assert abs(mass - 1.0) <= 1e-5, (i, label, mass)
        for p in range(1, K):
            assert chars.fwer[p] <= chars.fwer[p - 1] + noise, (i, p)
        for q in range(1, K + 1):
            for p in range(1, q):
                assert chars.fwp[(p + 1, q, r)] <= \
                    chars.fwp[(p, q, r)] + noise, (i, p, q)
        for q in range(1, K):
            for p in range(1, q + 1):
                assert chars.fwp[(p, q + 1, r)] >= \
                    chars.fwp[(p, q, r)] - noise, (i, p, q)
    report(7, True, f"50 randomized designs: outcome mass within "
                    f"{worst_mass:.2e} of 1, FWER_I and FWP monotone")


# --------------------------------------------------------------------------
# 8. single-stage oracle
# --------------------------------------------------------------------------


def test_criterion_8_single_stage_oracle():
    params = DesignParams(K=1, J=1, a=1, b=1, c=1, d=1, alpha=0.025,
                          beta=0.1, delta=1.0, delta0=0.0,
                          sigma_sq=(1.0, 1.0), ratios=((1,), (1,)))
    fd = single_stage_design(params)
    report(8, fd.n_group == 21,
           f"per-group n = {fd.n_group} (want 21), "
           f"N_fixed = {compute_n_fixed(params)}")
    assert fd.n_group == 21
