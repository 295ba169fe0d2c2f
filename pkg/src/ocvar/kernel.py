"""First and second order assignment moments and the centered design matrix.

All objects live on the kn slot grid (see designs.expand_assignment).  pi is
the per-slot inclusion probability E[R_a]; p is the joint matrix
p_ab = E[R_a R_b]; d is the relative-covariance kernel
d_ab = p_ab / (pi_a pi_b) - 1, which drives every variance formula downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .designs import DesignDistribution, expand_assignment
from .errors import ConsistencyError, MatrixTooLarge, ZeroPi

MAX_MATRIX_SLOTS = 4_000


def _guard_slots(kn: int, limit: int = MAX_MATRIX_SLOTS) -> None:
    if kn > limit:
        raise MatrixTooLarge(f"kn={kn} exceeds dense matrix limit {limit}")


def safe_divide(num: np.ndarray, den: np.ndarray, strict: bool = False) -> np.ndarray:
    """Elementwise num/den with cells where den == 0 mapped to 0.

    strict=True raises instead when a zero denominator meets a nonzero
    numerator, which signals a non-estimable cell upstream.
    """
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    zero = den == 0.0
    if strict and np.any(zero & (num != 0.0)):
        raise ConsistencyError("nonzero numerator over a zero-probability cell")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(zero, 0.0, num / np.where(zero, 1.0, den))
    return out


@dataclass(frozen=True)
class FirstOrderProbs:
    """Slot inclusion probabilities pi = E[R] with optional Monte Carlo SEs."""

    pi: np.ndarray
    mode: str
    se: Optional[np.ndarray] = None
    draws: Optional[int] = None

    @property
    def kn(self) -> int:
        return self.pi.size


@dataclass(frozen=True)
class JointProbs:
    """Joint inclusion matrix p_ab = E[R_a R_b]; diag(p) = pi."""

    p: np.ndarray
    pi: np.ndarray
    mode: str
    se: Optional[np.ndarray] = None
    draws: Optional[int] = None

    @property
    def kn(self) -> int:
        return self.pi.size

    def check(self, tol: float = 1e-12) -> None:
        if not np.allclose(self.p, self.p.T, atol=tol):
            raise ConsistencyError("joint probability matrix is not symmetric")
        if np.max(np.abs(np.diag(self.p) - self.pi)) > tol:
            raise ConsistencyError("diag(p) != pi")


@dataclass(frozen=True)
class DesignMatrix:
    """Centered kernel d = p / (pi pi') - 1.

    Structural facts: symmetric PSD, diag d_aa = (1 - pi_a) / pi_a,
    same-unit cross-arm cells are -1, and d @ pi = 0 because every
    assignment activates exactly n slots.
    """

    d: np.ndarray
    pi: np.ndarray
    p: np.ndarray
    se: Optional[np.ndarray] = None

    @property
    def kn(self) -> int:
        return self.pi.size

    def null_residual(self) -> float:
        """max |(d @ pi)_a|; 0 up to roundoff for any proper design."""
        return float(np.max(np.abs(self.d @ self.pi)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh((self.d + self.d.T) / 2.0)[0])


def _weighted_moments(dist: DesignDistribution, k: int):
    rows = dist.weighted_support()
    kn = k * dist.design.n_units
    _guard_slots(kn)
    pi = np.zeros(kn)
    p = np.zeros((kn, kn))
    for a, w in rows:
        r = expand_assignment(a, k)
        pi += w * r
        p += w * np.outer(r, r)
    p = (p + p.T) / 2.0
    return pi, p


def compute_pi(dist: DesignDistribution) -> FirstOrderProbs:
    """E[R] under the distribution; sampled mode adds entrywise SEs."""
    k = dist.design.k_arms
    pi, _ = _weighted_moments(dist, k)
    se = None
    if dist.mode == "sampled":
        se = np.sqrt(np.maximum(pi - pi**2, 0.0) / dist.draws)
    return FirstOrderProbs(pi=pi, mode=dist.mode, se=se, draws=dist.n_draws)


def compute_p(dist: DesignDistribution) -> JointProbs:
    """E[R R'] under the distribution; sampled mode adds entrywise SEs.

    Indicator products are Bernoulli, so the entrywise Monte Carlo variance
    is m(1 - m)/N at mean m.
    """
    k = dist.design.k_arms
    pi, p = _weighted_moments(dist, k)
    se = None
    if dist.mode == "sampled":
        se = np.sqrt(np.maximum(p - p**2, 0.0) / dist.draws)
    jp = JointProbs(p=p, pi=pi, mode=dist.mode, se=se, draws=dist.n_draws)
    jp.check(tol=1e-9 if dist.mode == "sampled" else 1e-12)
    return jp


def compute_d(joint: JointProbs) -> DesignMatrix:
    """Centered kernel from joint probabilities; every slot needs pi_a > 0."""
    pi = joint.pi
    if np.any(pi <= 0.0):
        dead = np.flatnonzero(pi <= 0.0)
        raise ZeroPi(f"slots with zero inclusion probability: {dead.tolist()}")
    denom = np.outer(pi, pi)
    d = joint.p / denom - 1.0
    se = None
    if joint.se is not None:
        # first-order, holding pi at its estimate
        se = joint.se / denom
    return DesignMatrix(d=d, pi=pi, p=joint.p, se=se)
