"""Joint distribution of the stagewise Wald statistics.

With normally distributed responses, the vector of test statistics
Z[k][j] (arm k against control at analysis j) is multivariate normal.
Its mean is tau_k * sqrt(I[k][j]) where I is the Fisher information of
the treatment-effect estimate, and its covariance follows from the
independent-increments structure of cumulative sample means: the
covariance between an earlier and a later effect estimate equals the
variance of the later one.

The stacked vector is ordered stage-major, arms varying fastest, i.e.
position(k, j) = (j - 1) * K + (k - 1).  The covariance depends on the
allocation ratios and variances only, never on n or tau.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import DesignParams, EffectConfig
from .errors import ParameterError

__all__ = ["ZDistribution", "build_information", "build_z_distribution"]


def build_information(params: DesignParams, n: float) -> np.ndarray:
    """Information I[k][j] of the effect estimate, as a (K, J) array.

    I[k][j] = 1 / (sigma0^2 / (r[0][j] n) + sigmak^2 / (r[k][j] n)),
    row k-1 holding arm k.  n may be any positive real; integrality only
    matters when a design is actually run.
    """
    if not n > 0:
        raise ParameterError(f"group size n must be positive, got {n!r}")
    R = params.ratio_matrix()
    s = np.asarray(params.sigma_sq)
    return 1.0 / (s[0] / (R[0] * n) + s[1:, None] / (R[1:] * n))


@dataclass(frozen=True)
class ZDistribution:
    """Mean and covariance of the stacked statistic vector."""

    K: int
    J: int
    mean: np.ndarray
    cov: np.ndarray

    def position(self, k: int, j: int) -> int:
        """Flat index of Z[k][j] (arm k in 1..K, stage j in 1..J)."""
        if not (1 <= k <= self.K and 1 <= j <= self.J):
            raise ParameterError(f"no statistic Z[{k}][{j}] in a {self.K}-arm, "
                                 f"{self.J}-stage design")
        return (j - 1) * self.K + (k - 1)

    def marginal(self, pairs: Sequence[tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
        """Mean vector and covariance of the statistics at the given (k, j) pairs."""
        idx = [self.position(k, j) for k, j in pairs]
        return self.mean[idx], self.cov[np.ix_(idx, idx)]


def build_z_distribution(params: DesignParams, n: float, tau) -> ZDistribution:
    """Joint law of all K*J Wald statistics under effect vector tau."""
    if isinstance(tau, EffectConfig):
        tau = tau.tau
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (params.K,):
        raise ParameterError(f"tau needs one entry per arm, got shape {tau.shape}")
    K, J = params.K, params.J
    info = build_information(params, n)
    sqrt_info = np.sqrt(info)
    R = params.ratio_matrix()
    s = np.asarray(params.sigma_sq)

    cov = np.empty((K * J, K * J))
    for j2 in range(J):
        # Covariance of the stage-(j2+1) effect estimates: shared control
        # variance everywhere plus each arm's own sampling variance.
        V = np.full((K, K), s[0] / (R[0, j2] * n))
        V[np.diag_indices(K)] += s[1:] / (R[1:, j2] * n)
        for j1 in range(j2 + 1):
            block = sqrt_info[:, j1, None] * V * sqrt_info[None, :, j2]
            cov[j1 * K:(j1 + 1) * K, j2 * K:(j2 + 1) * K] = block
            if j1 != j2:
                cov[j2 * K:(j2 + 1) * K, j1 * K:(j1 + 1) * K] = block.T

    mean = (tau[:, None] * sqrt_info).T.reshape(-1)
    return ZDistribution(K=K, J=J, mean=mean, cov=cov)
