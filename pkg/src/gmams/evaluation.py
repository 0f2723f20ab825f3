"""Operating characteristics of a fully specified design.

Every quantity of interest is a weighted sum of outcome probabilities:
the chance of at least p false rejections (generalised familywise error
of order p), the chance of rejecting at least p of the first q arms
(familywise power), and the expected sample size.  Each outcome's
probability is the multivariate normal content of its rectangle.

Two paths compute these sums.  evaluate() integrates one rectangle at a
time to a requested tolerance and is the reporting path.  BatchEvaluator
scores whole batches of candidate boundary vectors on a shared lattice,
trading a little accuracy for the throughput that iterative searches
need; its results should always be confirmed through evaluate().
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
from scipy.special import ndtr, ndtri

from .design import (Boundaries, DesignParams, EffectConfig, make_delta_config,
                     null_config, validate)
from .distribution import build_information, build_z_distribution
from .errors import ParameterError
from .mvn import (QuadratureResult, _REGULARIZATION, _bvn_rect,
                  _bvn_rect_many, _lattice_generator, _lattice_points,
                  _permuted_cholesky, mvn_probability)
from .outcomes import (WeightedOutcome, build_rectangle, enumerate_xi,
                       interchangeable_blocks, reduced_or_full)

__all__ = ["OperatingChars", "evaluate", "outcome_probability",
           "outcome_probabilities", "BatchEvaluator"]

_INF_CUTOFF = 8.5


def _label_key(label: str) -> int:
    """Stable 63-bit key for an effect configuration label."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1

# The batched path trades shift count for lattice size: at a fixed point
# budget a larger lattice shrinks the error faster than extra shifts, and
# pooling across rounds absorbs the noisier spread estimate.
_GROUP_SHIFTS = 8


@dataclass(frozen=True)
class OperatingChars:
    """Error rates, power and sample-size summaries of one design.

    fwer[p-1] is the probability of at least p false rejections under
    the global null.  fwp maps (p, q, r) to the probability of rejecting
    at least p of the first q arms when the first r arms carry the
    interesting effect (entries exist for the q values that the
    evaluated effect configurations support).  ess maps an effect
    configuration label to its expected total sample size, and
    total_probability records the per-configuration probability mass as
    a quadrature diagnostic (it should be 1 up to tolerance).
    """

    fwer: tuple[float, ...]
    fwp: dict[tuple[int, int, int], float]
    ess: dict[str, float]
    max_n: float
    total_probability: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "fwer": list(self.fwer),
            "fwp": {f"{p}|{q}|{r}": v for (p, q, r), v in self.fwp.items()},
            "ess": dict(self.ess),
            "max_n": self.max_n,
            "total_probability": dict(self.total_probability),
        }


def _delta_pattern(params: DesignParams, tau: tuple[float, ...]) -> int | None:
    """Return r when tau equals (delta,)*r + (delta0,)*(K-r), else None."""
    for r in range(params.K + 1):
        if tau == make_delta_config(params, r).tau:
            return r
    return None


def _aligned_q(blocks, K: int) -> list[int]:
    """q values for which 'the first q arms' is a union of whole blocks."""
    ordered = sorted(blocks, key=lambda b: b[0])
    out, cum = [], 0
    for block in ordered:
        if tuple(block) != tuple(range(cum + 1, cum + len(block) + 1)):
            break
        cum += len(block)
        out.append(cum)
    return out


def _check_inputs(params: DesignParams, bounds: Boundaries, n: float):
    report = validate(params, bounds)
    if not report.valid:
        raise ParameterError("; ".join(report.problems))
    if not (n > 0 and math.isfinite(n)):
        raise ParameterError(f"group size n must be positive and finite, got {n!r}")


def outcome_probability(wo: WeightedOutcome, dist, bounds: Boundaries, d: int,
                        tol: float = 1e-6, seed=0) -> QuadratureResult:
    """Probability of a single outcome under the given Z distribution."""
    rect, active = build_rectangle(wo.outcome, bounds, d)
    mean, cov = dist.marginal(active)
    return mvn_probability(rect, mean, cov, tol=tol, seed=seed)


def _forward_estimates(L, lo, hi, x):
    """One randomized-lattice estimate per outcome, (G,) for (G,m) inputs.

    Same separation-of-variables recursion as mvn._qmc_estimates, but
    with a per-outcome Cholesky factor so a whole group of equal-
    dimension rectangles is handled in one pass.
    """
    G, m = lo.shape
    tiny = 1e-16
    piv0 = np.maximum(L[:, 0, 0], 1e-300)
    d_cur = ndtr(lo[:, 0] / piv0)[:, None]
    e_cur = ndtr(hi[:, 0] / piv0)[:, None]
    fprod = np.maximum(e_cur - d_cur, 0.0)
    y = np.empty((G, m - 1, x.shape[0]))
    for i in range(1, m):
        u = np.clip(d_cur + x[None, :, i - 1] * (e_cur - d_cur),
                    tiny, 1.0 - tiny)
        y[:, i - 1, :] = ndtri(u)
        scond = np.einsum("gj,gjn->gn", L[:, i, :i], y[:, :i, :])
        piv = np.maximum(L[:, i, i], 1e-300)[:, None]
        d_cur = ndtr((lo[:, i, None] - scond) / piv)
        e_cur = ndtr((hi[:, i, None] - scond) / piv)
        fprod = fprod * np.maximum(e_cur - d_cur, 0.0)
    return fprod.mean(axis=1)


def _integrate_outcomes(wos, bounds: Boundaries, z, d: int, tol: float,
                        seed, max_points: int = 2 ** 23):
    """QuadratureResult per outcome, batching equal integration dimensions.

    Closed forms handle one and two dimensions; higher dimensions share
    shifted-lattice rounds per dimension group, escalating the lattice
    size only for the outcomes whose spread across shifts still exceeds
    tol.  Estimates depend only on (outcome, round), never on which
    other outcomes are still unconverged, and are deterministic in seed.
    """
    entropy = tuple(np.atleast_1d(seed).astype(np.uint64).tolist())
    count = len(wos)
    values = np.zeros(count)
    errors = np.zeros(count)
    points = np.zeros(count, dtype=np.int64)
    by_dim: dict[int, list[int]] = {}
    factors = [None] * count
    for i, wo in enumerate(wos):
        rect, active = build_rectangle(wo.outcome, bounds, d)
        mean, cov = z.marginal(active)
        scale = np.sqrt(np.diag(cov))
        lo = np.clip((np.asarray(rect.lower) - mean) / scale,
                     -_INF_CUTOFF, _INF_CUTOFF)
        hi = np.clip((np.asarray(rect.upper) - mean) / scale,
                     -_INF_CUTOFF, _INF_CUTOFF)
        m = len(active)
        if m == 1:
            values[i] = max(ndtr(hi[0]) - ndtr(lo[0]), 0.0)
            errors[i] = 1e-15
            points[i] = 1
        elif m == 2:
            corr = cov / np.outer(scale, scale)
            values[i] = _bvn_rect(lo, hi, float(corr[0, 1]))
            errors[i] = 1e-9
            points[i] = 64
        else:
            corr = cov / np.outer(scale, scale) + _REGULARIZATION * np.eye(m)
            factors[i] = _permuted_cholesky(corr, lo, hi)[:3]
            by_dim.setdefault(m, []).append(i)

    for m, idx in sorted(by_dim.items()):
        sub = np.asarray(idx)
        Ls = np.stack([factors[i][0] for i in idx])
        los = np.stack([factors[i][1] for i in idx])
        his = np.stack([factors[i][2] for i in idx])
        act = np.arange(sub.size)
        # Rounds pool by inverse variance, so each enlargement only needs to
        # bring the combined spread under tol, not stand on its own.
        inv_var = np.zeros(sub.size)
        weighted = np.zeros(sub.size)
        n_points = 128 << min(max(m - 3, 0), 3)
        round_no = 0
        while act.size:
            n_actual = _lattice_generator(m - 1, n_points)[1]
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy + (m, round_no)))
            shifts = rng.random((_GROUP_SHIFTS, m - 1))
            ests = np.empty((_GROUP_SHIFTS, act.size))
            for si in range(_GROUP_SHIFTS):
                x = _lattice_points(m - 1, n_points, shifts[si])
                ests[si] = _forward_estimates(Ls[act], los[act], his[act], x)
            se = ests.std(axis=0, ddof=1) / math.sqrt(_GROUP_SHIFTS)
            w = 1.0 / np.maximum(se * se, 1e-30)
            inv_var[act] += w
            weighted[act] += w * ests.mean(axis=0)
            err = 3.0 / np.sqrt(inv_var[act])
            values[sub[act]] = weighted[act] / inv_var[act]
            errors[sub[act]] = err
            points[sub[act]] += n_actual * _GROUP_SHIFTS
            still = (err > tol) & (
                points[sub[act]] + 2 * n_actual * _GROUP_SHIFTS <= max_points)
            act = act[still]
            if act.size:
                # Grow by the shortfall of the worst remaining outcome,
                # assuming the error shrinks no slower than 1/N.  Capped so
                # a noisy spread estimate cannot trigger a runaway round.
                ratio = float(np.max(err[still])) / tol
                grow = 2 ** min(max(math.ceil(math.log2(ratio)), 1), 3)
                n_points *= grow
            round_no += 1

    return [QuadratureResult(float(np.clip(values[i], 0.0, 1.0)),
                             float(errors[i]), int(points[i]))
            for i in range(count)]


def outcome_probabilities(params: DesignParams, bounds: Boundaries, n: float,
                          tau, tol: float = 1e-6, seed=0,
                          reduced: bool = True
                          ) -> list[tuple[WeightedOutcome, QuadratureResult]]:
    """Probability of every (possibly order-reduced) outcome under tau."""
    _check_inputs(params, bounds, n)
    if isinstance(tau, EffectConfig):
        tau = tau.tau
    tau = tuple(float(t) for t in tau)
    if reduced:
        wos = reduced_or_full(params, tau, bounds)
    else:
        wos = [WeightedOutcome(o, 1)
               for o in enumerate_xi(params.d, params.J, params.K, bounds)]
    z = build_z_distribution(params, n, tau)
    results = _integrate_outcomes(wos, bounds, z, params.d, tol, seed)
    return list(zip(wos, results))


def _config_summary(params: DesignParams, bounds: Boundaries, n: float,
                    config: EffectConfig, tol: float, seed,
                    reduced: bool) -> SimpleNamespace:
    pairs = outcome_probabilities(params, bounds, n, config.tau,
                                  tol=tol, seed=seed, reduced=reduced)
    K = params.K
    R = params.ratio_matrix()
    fwer = np.zeros(K)
    prefix = {q: 0.0 for q in range(1, K + 1)}
    fwp = np.zeros((K, K))  # [p-1, q-1]
    ess = 0.0
    total = 0.0
    if reduced:
        blocks, ok = interchangeable_blocks(params, config.tau)
        q_values = _aligned_q(blocks, K) if ok else list(range(1, K + 1))
    else:
        q_values = list(range(1, K + 1))
    for wo, res in pairs:
        o = wo.outcome
        w = wo.degeneracy * res.value
        total += w
        false_rej = sum(p for p, t in zip(o.psi, config.tau) if p and t <= 0)
        if false_rej:
            fwer[:false_rej] += w
        for q in q_values:
            hits = sum(o.psi[:q])
            if hits:
                fwp[:hits, q - 1] += w
        mult = R[0, o.stop_stage - 1] + sum(
            R[k, o.omega[k - 1] - 1] for k in range(1, K + 1))
        ess += w * n * mult
    return SimpleNamespace(config=config, fwer=fwer, fwp=fwp, ess=ess,
                           total=total, q_values=q_values)


def evaluate(params: DesignParams, bounds: Boundaries, n: float,
             configs=None, tol: float = 1e-6, seed: int = 0,
             reduced: bool = True, threads: int | None = None) -> OperatingChars:
    """Score a design under one or more effect configurations.

    Defaults to the global null plus delta_0 .. delta_K (first r arms at
    delta, the rest at delta0), which covers the familywise error rates,
    the power grid, and the usual expected-sample-size columns.

    The reduced space is used whenever the arms an effect configuration
    makes interchangeable also share variances and allocations; familywise
    power entries are then only available at q values that align with
    whole blocks, which includes every (p, q=r, r) combination.
    """
    _check_inputs(params, bounds, n)
    if configs is None:
        configs = [null_config(params)] + [
            make_delta_config(params, r) for r in range(params.K + 1)]
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ParameterError("effect configuration labels must be unique")

    def run(config):
        # key the quadrature noise by the configuration's label, not its
        # position, so the same configuration reproduces bit-identically
        # whatever else the call evaluates alongside it
        return _config_summary(params, bounds, n, config, tol,
                               (seed, _label_key(config.label)), reduced)

    if threads is not None and threads > 1 and len(configs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            summaries = list(pool.map(run, configs))
    else:
        summaries = [run(c) for c in configs]

    K = params.K
    fwer = tuple(0.0 for _ in range(K))
    fwp: dict[tuple[int, int, int], float] = {}
    ess: dict[str, float] = {}
    total: dict[str, float] = {}
    for s in summaries:
        ess[s.config.label] = float(s.ess)
        total[s.config.label] = float(s.total)
        if all(t == 0.0 for t in s.config.tau):
            fwer = tuple(float(v) for v in s.fwer)
        r = _delta_pattern(params, s.config.tau)
        if r is not None:
            for q in s.q_values:
                for p in range(1, q + 1):
                    fwp[(p, q, r)] = float(s.fwp[p - 1, q - 1])
    return OperatingChars(
        fwer=fwer, fwp=fwp, ess=ess,
        max_n=float(n * params.total_ratio(params.J)),
        total_probability=total,
    )


# ---------------------------------------------------------------------------
# batched path for iterative searches
# ---------------------------------------------------------------------------

# Bound sources for rectangle coordinates, per (outcome, stage) cell.
_SRC_NEG_INF = 0
_SRC_POS_INF = 1
_SRC_FUT = 2
_SRC_EFF = 3


class _DimGroup:
    """Outcomes of one integration dimension, stacked for vector scoring."""

    __slots__ = ("m", "idx", "chol", "mu1", "stage", "lo_src", "hi_src", "points")

    def __init__(self, m, idx, chol, mu1, stage, lo_src, hi_src, points):
        self.m = m
        self.idx = idx
        self.chol = chol
        self.mu1 = mu1
        self.stage = stage
        self.lo_src = lo_src
        self.hi_src = hi_src
        self.points = points


class _ConfigPack:
    __slots__ = ("label", "tau", "groups", "degeneracy", "fwer_weight",
                 "fwp_weight", "ess_mult", "n_outcomes")


class BatchEvaluator:
    """Rates and expected sample sizes for whole batches of candidates.

    The outcome spaces, covariance factors and lattice point sets depend
    only on the parameters, so they are built once; each call to rates()
    then scores C candidate (futility, efficacy, n) triples with a fixed
    amount of vectorized work.  Results are deterministic for a given
    constructor seed.

    The accuracy knob is (n_points, n_shifts); defaults suit a search
    loop (absolute error around 1e-4), quadruple them for calibration
    work.
    """

    def __init__(self, params: DesignParams, n_points: int = 128,
                 n_shifts: int = 8, seed: int = 0):
        self.params = params
        self.n_points = n_points
        self.n_shifts = n_shifts
        configs = [null_config(params), make_delta_config(params, params.c)]
        # Covariance never depends on n or tau; information at n = 1 gives
        # the sqrt(n) mean scaling.
        z1 = build_z_distribution(params, 1.0, (0.0,) * params.K)
        self._sqrt_info1 = np.sqrt(build_information(params, 1.0))
        rng = np.random.default_rng(seed)
        self._packs = {c.label: self._build_pack(c, z1.cov, rng) for c in configs}

    def _build_pack(self, config: EffectConfig, cov: np.ndarray,
                    rng: np.random.Generator) -> _ConfigPack:
        params = self.params
        K, J, d = params.K, params.J, params.d
        R = params.ratio_matrix()
        wos = reduced_or_full(params, config.tau)
        pack = _ConfigPack()
        pack.label = config.label
        pack.tau = np.asarray(config.tau)
        pack.n_outcomes = len(wos)
        pack.degeneracy = np.array([w.degeneracy for w in wos], dtype=float)
        false_rej = np.array([
            sum(p for p, t in zip(w.outcome.psi, config.tau) if p and t <= 0)
            for w in wos])
        prefix_c = np.array([sum(w.outcome.psi[:params.c]) for w in wos])
        pack.fwer_weight = pack.degeneracy * (false_rej >= params.a)
        pack.fwp_weight = pack.degeneracy * (prefix_c >= params.b)
        pack.ess_mult = pack.degeneracy * np.array([
            R[0, w.outcome.stop_stage - 1]
            + sum(R[k, w.outcome.omega[k - 1] - 1] for k in range(1, K + 1))
            for w in wos])

        by_dim: dict[int, list[int]] = {}
        cells = []
        for i, w in enumerate(wos):
            o = w.outcome
            active = []
            for j in range(1, J + 1):
                for k in range(1, K + 1):
                    if j <= o.omega[k - 1]:
                        active.append((k, j))
            cells.append(active)
            by_dim.setdefault(len(active), []).append(i)

        groups = []
        stop_info = [(w.outcome.stop_stage, w.outcome.rejections >= d) for w in wos]
        for m in sorted(by_dim):
            idx = np.array(by_dim[m])
            G = len(idx)
            chol = np.empty((G, m, m))
            mu1 = np.empty((G, m))
            stage = np.empty((G, m), dtype=np.intp)
            lo_src = np.empty((G, m), dtype=np.int8)
            hi_src = np.empty((G, m), dtype=np.int8)
            for gi, i in enumerate(idx):
                o = wos[i].outcome
                active = cells[i]
                pos = [(j - 1) * K + (k - 1) for (k, j) in active]
                sub = cov[np.ix_(pos, pos)] + 1e-12 * np.eye(m)
                chol[gi] = np.linalg.cholesky(sub)
                stop_stage, terminated = stop_info[i]
                for ci, (k, j) in enumerate(active):
                    mu1[gi, ci] = config.tau[k - 1] * self._sqrt_info1[k - 1, j - 1]
                    stage[gi, ci] = j - 1
                    w_k = o.omega[k - 1]
                    if j < w_k:
                        lo_src[gi, ci] = _SRC_FUT
                        hi_src[gi, ci] = _SRC_EFF
                    elif o.psi[k - 1] == 1:
                        lo_src[gi, ci] = _SRC_EFF
                        hi_src[gi, ci] = _SRC_POS_INF
                    elif w_k == stop_stage and terminated:
                        lo_src[gi, ci] = _SRC_NEG_INF
                        hi_src[gi, ci] = _SRC_EFF
                    else:
                        lo_src[gi, ci] = _SRC_NEG_INF
                        hi_src[gi, ci] = _SRC_FUT
            points = None
            if m >= 3:
                shifts = rng.random((self.n_shifts, m - 1))
                points = np.stack([
                    _lattice_points(m - 1, self.n_points, shifts[s])
                    for s in range(self.n_shifts)])
            groups.append(_DimGroup(m, idx, chol, mu1, stage, lo_src, hi_src, points))
        pack.groups = groups
        return pack

    @staticmethod
    def _bounds_from_src(src, stage, f, e, sign):
        # f, e: (C, J); stage/src: (G, m) -> (C, G, m)
        fv = f[:, stage]
        ev = e[:, stage]
        out = np.where(src == _SRC_FUT, fv, np.where(src == _SRC_EFF, ev,
                       sign * _INF_CUTOFF))
        return out

    def _group_probs(self, group: _DimGroup, f, e, sqrt_n):
        lo = self._bounds_from_src(group.lo_src, group.stage, f, e, -1.0)
        hi = self._bounds_from_src(group.hi_src, group.stage, f, e, +1.0)
        mean = group.mu1[None, :, :] * sqrt_n[:, None, None]
        a = np.maximum(lo - mean, -_INF_CUTOFF)
        b = np.minimum(hi - mean, _INF_CUTOFF)
        m = group.m
        if m == 1:
            return np.clip(ndtr(b[:, :, 0]) - ndtr(a[:, :, 0]), 0.0, None)
        if m == 2:
            C, G = a.shape[0], a.shape[1]
            probs = np.empty((C, G))
            for gi in range(G):
                rho = float(group.chol[gi][1, 0] * group.chol[gi][0, 0])
                probs[:, gi] = _bvn_rect_many(a[:, gi], b[:, gi], rho)
            return probs
        L = group.chol
        est = 0.0
        tiny = 1e-16
        for s in range(self.n_shifts):
            x = group.points[s]  # (N, m-1) with N the lattice size actually used
            d0 = ndtr(a[:, :, 0] / L[None, :, 0, 0])
            e0 = ndtr(b[:, :, 0] / L[None, :, 0, 0])
            fprod = np.maximum(e0 - d0, 0.0)[:, :, None]
            d_cur = d0[:, :, None]
            e_cur = e0[:, :, None]
            Y = np.empty((a.shape[0], a.shape[1], m - 1, x.shape[0]))
            for i in range(1, m):
                u = np.clip(d_cur + x[None, None, :, i - 1] * (e_cur - d_cur),
                            tiny, 1.0 - tiny)
                Y[:, :, i - 1, :] = ndtri(u)
                scond = np.einsum("gj,cgjn->cgn", L[:, i, :i], Y[:, :, :i, :])
                dii = L[None, :, i, i, None]
                d_cur = ndtr((a[:, :, i, None] - scond) / dii)
                e_cur = ndtr((b[:, :, i, None] - scond) / dii)
                fprod = fprod * np.maximum(e_cur - d_cur, 0.0)
            est = est + fprod.mean(axis=-1)
        return est / self.n_shifts

    def _pack_probs(self, pack: _ConfigPack, f, e, sqrt_n):
        C = f.shape[0]
        probs = np.empty((C, pack.n_outcomes))
        for group in pack.groups:
            probs[:, group.idx] = self._group_probs(group, f, e, sqrt_n)
        return probs

    def rates(self, f, e, n) -> SimpleNamespace:
        """Score candidates: f, e of shape (C, J), n of shape (C,).

        Returns arrays over candidates: fwer (at order a, global null),
        fwp (b of the first c arms, under delta_c), ess_null and ess_alt
        (expected sample sizes under the null and delta_c
        configurations), and total_null (probability mass diagnostic).
        """
        f = np.atleast_2d(np.asarray(f, dtype=float))
        e = np.atleast_2d(np.asarray(e, dtype=float))
        n = np.atleast_1d(np.asarray(n, dtype=float))
        sqrt_n = np.sqrt(n)
        null_pack = self._packs["null"]
        alt_pack = self._packs[f"delta_{self.params.c}"]

        null_probs = self._pack_probs(null_pack, f, e, sqrt_n)
        alt_probs = self._pack_probs(alt_pack, f, e, sqrt_n)
        return SimpleNamespace(
            fwer=null_probs @ null_pack.fwer_weight,
            fwp=alt_probs @ alt_pack.fwp_weight,
            ess_null=n * (null_probs @ null_pack.ess_mult),
            ess_alt=n * (alt_probs @ alt_pack.ess_mult),
            total_null=null_probs @ null_pack.degeneracy,
        )
