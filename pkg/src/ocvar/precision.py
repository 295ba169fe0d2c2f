"""Variance of variance estimators over the randomization distribution.

The default path enumerates scalar estimator values and takes their design
variance directly.  A matricized fourth-moment path computes the same thing
from E[vec(O) vec(O)'] and exists to cross-check the algebra on tiny
designs; both paths agree wherever both run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .designs import DesignDistribution, expand_assignment
from .errors import TensorTooLarge
from .oc import MAX_TENSOR_SLOTS


@dataclass(frozen=True)
class DesignScalar:
    """A scalar statistic's exact design mean and variance."""

    mean: float
    variance: float
    values: np.ndarray
    weights: np.ndarray


def design_scalar(
    value_fn: Callable[[np.ndarray], float], dist: DesignDistribution, k: int
) -> DesignScalar:
    rows = dist.weighted_support()
    values = np.empty(len(rows))
    weights = np.empty(len(rows))
    for i, (a, w) in enumerate(rows):
        values[i] = value_fn(expand_assignment(a, k))
        weights[i] = w
    mean = float(weights @ values)
    var = float(weights @ (values - mean) ** 2)
    return DesignScalar(mean=mean, variance=max(var, 0.0), values=values, weights=weights)


def var_of_varest(
    dist: DesignDistribution,
    o_fn: Callable[[np.ndarray], np.ndarray],
    y: np.ndarray,
    k: int,
) -> float:
    """Design variance of y' O(R) y by direct enumeration of the scalar."""
    return design_scalar(lambda r: float(y @ o_fn(r) @ y), dist, k).variance


def var_of_varest_tensor(
    dist: DesignDistribution,
    o_fn: Callable[[np.ndarray], np.ndarray],
    y: np.ndarray,
    k: int,
) -> float:
    """Same quantity through the matricized fourth moment
    E[vec(O) vec(O)'] - vec(E[O]) vec(E[O])', contracted with vec(y y')."""
    kn = y.size
    if kn > MAX_TENSOR_SLOTS:
        raise TensorTooLarge(f"kn={kn} exceeds tensor limit {MAX_TENSOR_SLOTS}")
    fourth = np.zeros((kn * kn, kn * kn))
    first = np.zeros(kn * kn)
    for a, w in dist.weighted_support():
        vec_o = o_fn(expand_assignment(a, k)).reshape(-1)
        fourth += w * np.outer(vec_o, vec_o)
        first += w * vec_o
    yy = np.outer(y, y).reshape(-1)
    value = float(yy @ fourth @ yy - (first @ yy) ** 2)
    return max(value, 0.0)


@dataclass(frozen=True)
class PrecisionComparison:
    v_gs: float
    v_oc2: float
    difference: float
    mean_gs: float
    mean_oc2: float


def compare_gs_oc2(
    dist: DesignDistribution,
    gs_fn: Callable[[np.ndarray], float],
    oc2_fn: Callable[[np.ndarray], float],
    k: int,
) -> PrecisionComparison:
    """Design variances of the two estimators and their difference.

    No sign is asserted; the difference is informational.
    """
    gs = design_scalar(gs_fn, dist, k)
    oc = design_scalar(oc2_fn, dist, k)
    return PrecisionComparison(
        v_gs=gs.variance,
        v_oc2=oc.variance,
        difference=gs.variance - oc.variance,
        mean_gs=gs.mean,
        mean_oc2=oc.mean,
    )
