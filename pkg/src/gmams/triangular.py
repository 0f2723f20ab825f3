"""Modified triangular-test designs.

The triangular test prescribes closed-form futility and efficacy
boundaries that converge linearly in information, indexed by a nominal
error pair (alpha', beta').  Because the multi-arm conduct rules change
the realized error rates, the pair is calibrated numerically: a grid
scan plus simplex polish drives the squared distance between the
realized (FWER, FWP) and their targets to zero, and the returned design
records that distance as its residual.

The shape formulas assume equal experimental variances and the equal
cumulative allocation r[k][j] = j; both are checked.  The information
scale divides by J * delta_tilde; the classical form divides by
J * delta_tilde**2 instead and is available via squared_delta=True (the
calibration hits the same targets either way, through different
(alpha', beta')).  The group size follows from the stage-1 information
identity I_1 = n / (sigma_0^2 + sigma_1^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtri

from .design import (Boundaries, DesignParams, equal_cumulative_ratios,
                     make_delta_config, null_config)
from .errors import CalibrationError, ParameterError
from .evaluation import BatchEvaluator, evaluate

__all__ = ["TriangularShape", "TriangularDesign", "triangular_shape",
           "calibrate_triangular"]

_CORRECTION = 0.583  # continuity correction for the discrete looks


class TriangularShape(NamedTuple):
    """Closed-form design shape at one (alpha', beta') point."""

    delta_tilde: float
    info: tuple[float, ...]
    bounds: Boundaries
    n: float


@dataclass(frozen=True)
class TriangularDesign:
    """A calibrated triangular design and the residual of its calibration.

    residual is the final calibration objective,
    (FWER - alpha)^2 + (FWP - (1 - beta))^2, re-evaluated accurately at
    the returned design.
    """

    alpha_prime: float
    beta_prime: float
    delta_tilde: float
    info: tuple[float, ...]
    bounds: Boundaries
    n: float
    residual: float

    def to_dict(self) -> dict:
        return {
            "alpha_prime": self.alpha_prime,
            "beta_prime": self.beta_prime,
            "delta_tilde": self.delta_tilde,
            "info": list(self.info),
            "bounds": self.bounds.to_dict(),
            "n": self.n,
            "residual": self.residual,
        }


def _check_setting(params: DesignParams) -> None:
    if len(set(params.sigma_sq[1:])) != 1:
        raise ParameterError(
            "triangular shapes assume equal experimental variances")
    if params.ratios != equal_cumulative_ratios(params.K, params.J):
        raise ParameterError(
            "triangular shapes assume the allocation r[k][j] = j for every arm")


def triangular_shape(alpha_prime: float, beta_prime: float,
                     params: DesignParams, squared_delta: bool = False,
                     equalize: bool = True) -> TriangularShape:
    """Evaluate the closed-form shape at one (alpha', beta') pair.

    With equalize=True (the default) the final futility and efficacy
    bounds are replaced by their average so the design always reaches a
    decision at stage J; pass equalize=False to inspect the raw shape,
    whose final-stage gap is generally nonzero.
    """
    _check_setting(params)
    if not 0.0 < alpha_prime < 0.5:
        raise ParameterError(
            "alpha_prime must lie in (0, 1/2) so log(1 / (2 alpha')) > 0")
    if not 0.0 < beta_prime < 1.0:
        raise ParameterError("beta_prime must lie in (0, 1)")

    za = float(ndtri(1.0 - alpha_prime))
    zb = float(ndtri(1.0 - beta_prime))
    if za + zb <= 0.0:
        raise ParameterError(
            "alpha' and beta' make the reference effect nonpositive")
    delta_tilde = 2.0 * za / (za + zb) * params.delta

    J = params.J
    L = math.log(1.0 / (2.0 * alpha_prime))
    c = _CORRECTION
    core = math.sqrt(4.0 * c * c / J + 8.0 * L) - 2.0 * c / math.sqrt(J)
    denom = J * (delta_tilde ** 2 if squared_delta else delta_tilde)
    info = tuple(j * core * core / denom for j in range(1, J + 1))

    scale = info[-1] / J
    f = []
    e = []
    for j in range(1, J + 1):
        drift = scale * j / math.sqrt(info[j - 1])
        f.append(-2.0 / delta_tilde * L + c * math.sqrt(scale)
                 + 0.75 * delta_tilde * drift)
        e.append(2.0 / delta_tilde * L - c * math.sqrt(scale)
                 + 0.25 * delta_tilde * drift)
    if equalize:
        final = 0.5 * (f[-1] + e[-1])
        f[-1] = e[-1] = final
    n = (params.sigma_sq[0] + params.sigma_sq[1]) * info[0]
    return TriangularShape(delta_tilde=delta_tilde, info=info,
                           bounds=Boundaries(tuple(f), tuple(e)), n=n)


def _shape_batch(points: np.ndarray, params: DesignParams,
                 squared_delta: bool):
    """Shapes for rows of (alpha', beta'); invalid rows are masked out."""
    C = points.shape[0]
    J = params.J
    f = np.empty((C, J))
    e = np.empty((C, J))
    n = np.empty(C)
    ok = np.zeros(C, dtype=bool)
    for i, (ap, bp) in enumerate(points):
        if not (0.0 < ap < 0.5 and 0.0 < bp < 1.0):
            continue
        try:
            shape = triangular_shape(ap, bp, params, squared_delta=squared_delta)
        except ParameterError:
            continue
        fi, ei = shape.bounds.futility, shape.bounds.efficacy
        if shape.n <= 0.0 or any(fi[j] >= ei[j] for j in range(J - 1)):
            continue
        f[i], e[i], n[i] = fi, ei, shape.n
        ok[i] = True
    return f, e, n, ok


def calibrate_triangular(params: DesignParams, tol: float = 1e-6,
                         squared_delta: bool = False, seed: int = 0,
                         grid: int = 24,
                         threads: int | None = None) -> TriangularDesign:
    """Find the (alpha', beta') whose shape realizes the target rates.

    A geometric grid over (0, 1/2)^2 is scored on a fixed lattice, the
    best cell polished with Nelder-Mead on the same lattice, and the
    winner re-evaluated accurately; if the accurate residual still
    exceeds tol, a short accurate-path polish runs before giving up with
    a CalibrationError that carries the best design found.
    """
    _check_setting(params)
    evaluator = BatchEvaluator(params, seed=seed)
    target = 1.0 - params.beta

    def batch_residual(points: np.ndarray) -> np.ndarray:
        f, e, n, ok = _shape_batch(points, params, squared_delta)
        out = np.full(points.shape[0], np.inf)
        if ok.any():
            r = evaluator.rates(f[ok], e[ok], n[ok])
            out[ok] = (r.fwer - params.alpha) ** 2 + (r.fwp - target) ** 2
        return out

    axis = np.geomspace(1e-4, 0.4999, grid)
    A, B = np.meshgrid(axis, axis, indexing="ij")
    cells = np.column_stack([A.ravel(), B.ravel()])
    scores = batch_residual(cells)
    start = cells[int(np.argmin(scores))]

    def one(x: np.ndarray) -> float:
        p = np.clip(x, 1e-7, 0.4999)
        return float(batch_residual(p[None, :])[0])

    nm = minimize(one, start, method="Nelder-Mead",
                  options=dict(xatol=1e-9, fatol=1e-14, maxfev=400))
    best = np.clip(nm.x, 1e-7, 0.4999)

    def accurate(point: np.ndarray):
        shape = triangular_shape(point[0], point[1], params,
                                 squared_delta=squared_delta)
        configs = [null_config(params), make_delta_config(params, params.c)]
        chars = evaluate(params, shape.bounds, shape.n, configs=configs,
                         tol=min(tol, 1e-6), seed=seed, threads=threads)
        fwer = chars.fwer[params.a - 1]
        fwp = chars.fwp[(params.b, params.c, params.c)]
        residual = (fwer - params.alpha) ** 2 + (fwp - target) ** 2
        return shape, residual

    shape, residual = accurate(best)
    if residual > tol:
        nm2 = minimize(lambda x: accurate(np.clip(x, 1e-7, 0.4999))[1],
                       best, method="Nelder-Mead",
                       options=dict(xatol=1e-9, fatol=tol / 100.0, maxfev=60))
        cand = np.clip(nm2.x, 1e-7, 0.4999)
        shape2, residual2 = accurate(cand)
        if residual2 < residual:
            best, shape, residual = cand, shape2, residual2

    design = TriangularDesign(
        alpha_prime=float(best[0]), beta_prime=float(best[1]),
        delta_tilde=shape.delta_tilde, info=shape.info, bounds=shape.bounds,
        n=shape.n, residual=float(residual))
    if residual > tol:
        raise CalibrationError(
            f"triangular calibration stalled at residual {residual:.3e} "
            f"(requested {tol:.1e})", best=design)
    return design
