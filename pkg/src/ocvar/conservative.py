"""Guaranteed conservative variance estimation from the exact g matrix.

The exact design variance of a linear estimator c' W R y is y' g y with
g = E[v v'] - E[v] E[v]' and v = R W' c.  Absorbing the unidentified cells
of g into its diagonal gives g_tilde >= g (PSD order), whose quadratic form
can be estimated unbiasedly from observed outcomes, so the estimator's
expectation never falls below the true variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bounding import BoundedMatrix, amgm_bound, weight_by_p
from .designs import DesignDistribution, expand_assignment
from .errors import ConsistencyError
from .estimators import EstimatorSpec, w_realized


@dataclass(frozen=True)
class GMatrix:
    """Exact variance matrix of the influence vector v = R W' c."""

    g: np.ndarray
    mode: str
    draws: Optional[int] = None
    se: Optional[np.ndarray] = None


def g_matrix(
    dist: DesignDistribution,
    spec: EstimatorSpec,
    pi: np.ndarray,
    c: np.ndarray,
    with_se: bool = False,
) -> GMatrix:
    """g = E[v v'] - E[v] E[v]' over the assignment distribution."""
    kn = spec.kn
    mean_v = np.zeros(kn)
    mean_vv = np.zeros((kn, kn))
    support = list(dist.weighted_support())
    influences = []
    for a, w in support:
        r = expand_assignment(a, spec.k)
        v = r * (w_realized(spec, pi, r).T @ c)
        mean_v += w * v
        mean_vv += w * np.outer(v, v)
        influences.append(v)
    g = mean_vv - np.outer(mean_v, mean_v)
    se = None
    if with_se and dist.mode == "sampled":
        # delta-method linearization psi = vv' - E[v]v' - vE[v]'; its draw
        # variance covers both the product term and the mean correction
        mean_psi = np.zeros((kn, kn))
        sq_psi = np.zeros((kn, kn))
        for (a, w), v in zip(support, influences):
            psi = np.outer(v, v) - np.outer(mean_v, v) - np.outer(v, mean_v)
            mean_psi += w * psi
            sq_psi += w * psi * psi
        se = np.sqrt(np.maximum(sq_psi - mean_psi**2, 0.0) / dist.draws)
    return GMatrix(g=(g + g.T) / 2.0, mode=dist.mode, draws=dist.n_draws, se=se)


def g_bound(g: GMatrix, p: np.ndarray) -> BoundedMatrix:
    """Absorb g's weight on zero-probability cells into the diagonal."""
    return amgm_bound(g.g, p)


@dataclass(frozen=True)
class GcKernel:
    bound: BoundedMatrix
    weighted: np.ndarray  # g_tilde / p


def gc_kernel(g: GMatrix, p: np.ndarray) -> GcKernel:
    bound = g_bound(g, p)
    return GcKernel(bound=bound, weighted=weight_by_p(bound.d_tilde, p))


def gc_estimate(kernel: GcKernel, r: np.ndarray, y: np.ndarray) -> float:
    """y' R (g_tilde / p) R y; unbiased for y' g_tilde y >= V(delta_hat)."""
    ry = r * y
    return float(ry @ kernel.weighted @ ry)


def gc_mean(kernel: GcKernel, y: np.ndarray) -> float:
    """Expectation of the estimator: the bounded quadratic form itself."""
    return float(y @ kernel.bound.d_tilde @ y)


def true_variance(g: GMatrix, y: np.ndarray) -> float:
    value = float(y @ g.g @ y)
    if value < -1e-10:
        raise ConsistencyError(f"variance quadratic form came out negative: {value}")
    return max(value, 0.0)
