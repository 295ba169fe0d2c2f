"""Linear point estimators delta_hat = c' W R y and their Taylor pieces.

Two families share one interface: the fixed-denominator inverse-probability
estimator (kind "ht", W nonrandom) and realized weighted least squares
(kind "wls", W depends on the drawn assignment through the normal matrix).
Arm means, difference in means, the ratio form with m = 1/pi, and covariate
adjustment are all instances.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ShapeMismatch, SingularNormalMatrix, ZeroPi


def arm_indicators(n: int, k: int) -> np.ndarray:
    """(kn, k) block matrix; column a flags the arm-a slots."""
    return np.kron(np.eye(k), np.ones((n, 1)))


def build_x(
    n: int,
    k: int,
    covariates: Optional[np.ndarray] = None,
    expansion: str = "pooled",
) -> np.ndarray:
    """Slot-level regressor matrix with per-arm intercepts in the first k columns.

    covariates is (n, q) unit-level; "pooled" shares slopes across arms,
    "by_arm" gives each arm its own slope block, "none" ignores covariates.
    """
    e = arm_indicators(n, k)
    if covariates is None or expansion == "none":
        return e
    x_u = np.asarray(covariates, dtype=float)
    if x_u.ndim == 1:
        x_u = x_u[:, None]
    if x_u.shape[0] != n:
        raise ShapeMismatch(f"covariates rows {x_u.shape[0]} != n={n}")
    if expansion == "pooled":
        return np.hstack([e, np.tile(x_u, (k, 1))])
    if expansion == "by_arm":
        blocks = np.kron(np.eye(k), x_u)
        return np.hstack([e, blocks])
    raise ShapeMismatch(f"unknown expansion {expansion!r}")


def resolve_m(m: Union[str, np.ndarray, None], pi: np.ndarray) -> np.ndarray:
    """Diagonal regression weight vector; "identity" or "inv_pi" or explicit."""
    if m is None or (isinstance(m, str) and m == "identity"):
        return np.ones_like(pi)
    if isinstance(m, str):
        if m == "inv_pi":
            if np.any(pi <= 0):
                raise ZeroPi("m = 1/pi needs strictly positive pi")
            return 1.0 / pi
        raise ShapeMismatch(f"unknown weight spec {m!r}")
    mv = np.asarray(m, dtype=float)
    if mv.shape != pi.shape:
        raise ShapeMismatch(f"m shape {mv.shape} != pi shape {pi.shape}")
    if np.any(mv < 0):
        raise ShapeMismatch("regression weights must be nonnegative")
    return mv


@dataclass(frozen=True)
class EstimatorSpec:
    """Everything fixed about one estimator: kind, regressors, weights."""

    kind: str  # ht | wls
    n: int
    k: int
    x: Optional[np.ndarray] = None  # (kn, Q), wls only
    m: Optional[np.ndarray] = None  # (kn,), wls only

    @property
    def kn(self) -> int:
        return self.k * self.n

    @property
    def n_params(self) -> int:
        return self.k if self.kind == "ht" else self.x.shape[1]


def make_estimator(
    kind: str,
    n: int,
    k: int,
    pi: Optional[np.ndarray] = None,
    covariates: Optional[np.ndarray] = None,
    expansion: str = "none",
    m: Union[str, np.ndarray, None] = "identity",
) -> EstimatorSpec:
    if kind == "ht":
        return EstimatorSpec(kind="ht", n=n, k=k)
    if kind != "wls":
        raise ShapeMismatch(f"unknown estimator kind {kind!r}")
    if pi is None:
        raise ShapeMismatch("wls estimator needs pi to resolve weights")
    x = build_x(n, k, covariates=covariates, expansion=expansion)
    return EstimatorSpec(kind="wls", n=n, k=k, x=x, m=resolve_m(m, np.asarray(pi, dtype=float)))


def full_contrast(spec: EstimatorSpec, c_arm: Sequence[float]) -> np.ndarray:
    """Embed an arm-level contrast into coefficient space (intercepts first)."""
    c = np.asarray(c_arm, dtype=float)
    if c.size != spec.k:
        raise ShapeMismatch(f"arm contrast length {c.size} != k={spec.k}")
    if abs(c.sum()) > 1e-12:
        warnings.warn(
            "contrast does not sum to zero; the estimand depends on outcome location",
            stacklevel=2,
        )
    return np.concatenate([c, np.zeros(spec.n_params - spec.k)])


# ---------------------------------------------------------------------------
# weight matrices


def w_ht(pi: np.ndarray, n: int, k: int) -> np.ndarray:
    """(k, kn) fixed weights: row a averages y_a R_a / pi_a over the n units."""
    if np.any(pi <= 0):
        raise ZeroPi("inverse-probability weights need strictly positive pi")
    e = arm_indicators(n, k)
    return e.T * (1.0 / pi)[None, :] / n


def w_wls(x: np.ndarray, m: np.ndarray, r: np.ndarray) -> np.ndarray:
    """(Q, kn) realized weights (x' M_r x)^{-1} x' diag(m), M_r = diag(m o r)."""
    xtm = x.T * (m * r)[None, :]
    normal = xtm @ x
    if np.linalg.matrix_rank(normal) < normal.shape[0]:
        raise SingularNormalMatrix(
            "realized normal matrix is singular; an arm or cell has no treated units"
        )
    return np.linalg.solve(normal, x.T * m[None, :])


def w_wls_bar(x: np.ndarray, m: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """(Q, kn) expected-weight analog (x' diag(m o pi) x)^{-1} x' diag(m)."""
    normal = (x.T * (m * pi)[None, :]) @ x
    if np.linalg.matrix_rank(normal) < normal.shape[0]:
        raise SingularNormalMatrix("mean normal matrix is singular")
    return np.linalg.solve(normal, x.T * m[None, :])


def w_realized(spec: EstimatorSpec, pi: np.ndarray, r: np.ndarray) -> np.ndarray:
    if spec.kind == "ht":
        return w_ht(pi, spec.n, spec.k)
    return w_wls(spec.x, spec.m, r)


def w_mean(spec: EstimatorSpec, pi: np.ndarray) -> np.ndarray:
    if spec.kind == "ht":
        return w_ht(pi, spec.n, spec.k)
    return w_wls_bar(spec.x, spec.m, pi)


def residual_maker(spec: EstimatorSpec, pi: np.ndarray, r: np.ndarray) -> np.ndarray:
    """(kn, kn) matrix M = R - R x W R; M x = 0, M y = R U, M R = M.

    The "ht" kind has no regressors to project out, so M = R.
    """
    if spec.kind == "ht":
        return np.diag(r)
    w = w_wls(spec.x, spec.m, r)
    return np.diag(r) - (r[:, None] * spec.x) @ (w * r[None, :])


# ---------------------------------------------------------------------------
# point estimates and linearization pieces


def point_estimate(
    spec: EstimatorSpec, pi: np.ndarray, r: np.ndarray, y: np.ndarray, c: np.ndarray
) -> float:
    w = w_realized(spec, pi, r)
    return float(c @ (w @ (r * y)))


@dataclass(frozen=True)
class TaylorPieces:
    """Nonrandom linearization at the expected weights.

    b = w_bar (pi o y) are the anchor coefficients, u = y - x b the anchor
    residuals, z = pi o u o (w_bar' c) the influence vector whose quadratic
    form in d is the Taylor variance.
    """

    b: np.ndarray
    u: np.ndarray
    z: np.ndarray
    w_bar: np.ndarray


def taylor_quantities(
    spec: EstimatorSpec, pi: np.ndarray, y: np.ndarray, c: np.ndarray
) -> TaylorPieces:
    wb = w_mean(spec, pi)
    if spec.kind == "ht":
        b = np.zeros(spec.k)
        u = y.copy()
    else:
        b = wb @ (pi * y)
        u = y - spec.x @ b
    z = pi * u * (wb.T @ c)
    return TaylorPieces(b=b, u=u, z=z, w_bar=wb)


@dataclass(frozen=True)
class RandomPieces:
    """Per-assignment analogs: beta = W R y, big_u = y - x beta,
    big_z = pi o big_u o (W' c)."""

    beta: np.ndarray
    big_u: np.ndarray
    big_z: np.ndarray
    w: np.ndarray


def random_quantities(
    spec: EstimatorSpec, pi: np.ndarray, r: np.ndarray, y: np.ndarray, c: np.ndarray
) -> RandomPieces:
    w = w_realized(spec, pi, r)
    if spec.kind == "ht":
        beta = w @ (r * y)
        big_u = y.copy()
    else:
        beta = w @ (r * y)
        big_u = y - spec.x @ beta
    big_z = pi * big_u * (w.T @ c)
    return RandomPieces(beta=beta, big_u=big_u, big_z=big_z, w=w)
