"""Fixed-center variance estimators built from the design mean o = E[O].

OC0 reweights o by joint probabilities and evaluates on observed outcomes;
it is unbiased for E[GS] but not location invariant.  OC1 sandwiches o/p
between residual makers, gaining invariance at the price of bias.  OC2
removes that bias through a degree-4 moment tensor of the residual maker:

    B[(a,d),(b,c)] = (M_ba M_cd - R_ab R_cd) / sqrt(p_ad p_bc),

matricized with row index a*kn+d and column index b*kn+c, so that
contracting a matrix S over (b,c) with the root-p factors restored returns
M'SM - RSR exactly.  The design mean bbar = E[B], its eigenstructure, and
the closed-form alternating series drive the bias correction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bounding import weight_by_p
from .designs import DesignDistribution, expand_assignment
from .errors import SvdFailure, TensorTooLarge
from .estimators import EstimatorSpec, residual_maker
from .kernel import safe_divide
from .sandwich import residualize

MAX_TENSOR_SLOTS = 60

EPS_ZERO = 1e-12  # eigenvalues at or below this count as exact zeros
EPS_ONE = 1e-9  # eigenvalues at or above 1 - EPS_ONE go to the top partition
LAMBDA_SLACK = 1e-8  # allowed numerical excursion outside [0, 1]


def _guard_tensor(kn: int, limit: int = MAX_TENSOR_SLOTS) -> None:
    if kn > limit:
        raise TensorTooLarge(f"kn={kn} exceeds tensor limit {limit}")


# ---------------------------------------------------------------------------
# pointwise estimators


def oc0(q: np.ndarray, r: np.ndarray, y: np.ndarray) -> float:
    """y' R (o/p) R y; unbiased for y' o y because E[R_a R_b] = p_ab."""
    ry = r * y
    return float(ry @ q @ ry)


def oc1(
    spec: EstimatorSpec, pi: np.ndarray, q: np.ndarray, r: np.ndarray, y: np.ndarray
) -> float:
    """(M y)' (o/p) (M y); location invariant, biased for y' o y."""
    my = residualize(spec, pi, r, y)
    return float(my @ q @ my)


def q_from_mean(o_mean: np.ndarray, p: np.ndarray) -> np.ndarray:
    """o / p with the estimability check; o vanishes on p = 0 cells by
    construction, so any violation signals an inconsistent input pair."""
    return weight_by_p(o_mean, p, atol=0.0)


# ---------------------------------------------------------------------------
# degree-4 moment tensor, matricized


def _sqrt_and_inv(p: np.ndarray):
    sqrtp = np.sqrt(p).reshape(-1)
    inv = safe_divide(np.ones_like(sqrtp), sqrtp)
    return sqrtp, inv


def tensor_b(
    spec: EstimatorSpec, pi: np.ndarray, p: np.ndarray, r: np.ndarray
) -> np.ndarray:
    """(kn^2, kn^2) matricization of the B tensor for one assignment.

    kron identities give the layout directly: kron(M', M')[(a,d),(b,c)] is
    M_ba M_cd and kron(diag r, diag r)[(a,d),(b,c)] is R_ab R_cd.  Cells
    whose root-p factor vanishes are almost surely zero in the numerator
    and are set to zero.
    """
    kn = spec.kn
    _guard_tensor(kn)
    m = residual_maker(spec, pi, r)
    raw = np.kron(m.T, m.T) - np.kron(np.diag(r), np.diag(r))
    _, inv = _sqrt_and_inv(p)
    return raw * inv[:, None] * inv[None, :]


def contract_full(bmat: np.ndarray, p: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Restore both sqrt(p) factors and contract S over (b,c).

    For bmat = tensor_b(...) this reproduces M'SM - RSR on every cell with
    p_ad > 0 (the p_ad = 0 cells are almost surely zero anyway).
    """
    sqrtp, _ = _sqrt_and_inv(p)
    kn = p.shape[0]
    vec = bmat @ (sqrtp * s.reshape(-1))
    return (sqrtp * vec).reshape(kn, kn)


def contract_bias(bmat_part: np.ndarray, p: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Bias kernel: restore sqrt(p_bc) on the contraction side only and
    divide rows by sqrt(p_ad)."""
    sqrtp, inv = _sqrt_and_inv(p)
    kn = p.shape[0]
    vec = bmat_part @ (sqrtp * s.reshape(-1))
    return (inv * vec).reshape(kn, kn)


@dataclass(frozen=True)
class MomentTensor:
    """Design mean bbar = E[B], matricized, with provenance and diagnostics."""

    bmat: np.ndarray
    kn: int
    mode: str
    draws: Optional[int]
    asymmetry: float
    se: Optional[np.ndarray] = None


def bbar_mean(
    spec: EstimatorSpec,
    pi: np.ndarray,
    p: np.ndarray,
    dist: DesignDistribution,
    with_se: bool = False,
) -> MomentTensor:
    kn = spec.kn
    _guard_tensor(kn)
    acc = np.zeros((kn * kn, kn * kn))
    acc2 = np.zeros_like(acc) if (with_se and dist.mode == "sampled") else None
    for a, w in dist.weighted_support():
        r = expand_assignment(a, spec.k)
        b = tensor_b(spec, pi, p, r)
        acc += w * b
        if acc2 is not None:
            acc2 += w * b * b
    se = None
    if acc2 is not None:
        se = np.sqrt(np.maximum(acc2 - acc**2, 0.0) / dist.draws)
    asym = float(np.max(np.abs(acc - acc.T)))
    return MomentTensor(
        bmat=acc, kn=kn, mode=dist.mode, draws=dist.n_draws, asymmetry=asym, se=se
    )


@dataclass(frozen=True)
class SpectralSplit:
    """Eigenstructure of the symmetrized -bbar, partitioned at 1.

    lam holds all eigenvalues (descending); the mid partition 0 < lam < 1
    carries phi = lam / (1 - lam), the top partition lam >= 1 - eps cannot
    be absorbed by the series.  lam is expected to stay in [0, 1];
    in_unit_interval records whether that held to slack 1e-8.
    """

    lam: np.ndarray
    u: np.ndarray  # columns aligned with lam
    mid: np.ndarray  # boolean mask over lam
    top: np.ndarray
    phi: np.ndarray  # phi over the mid partition
    lam_mid_max: float
    in_unit_interval: bool
    asymmetry: float

    def component(self, mask: np.ndarray, values: np.ndarray) -> np.ndarray:
        cols = self.u[:, mask]
        return -(cols * values[None, :]) @ cols.T

    @property
    def b_mid(self) -> np.ndarray:
        """-u lam u' over the mid partition: the series' first term."""
        return self.component(self.mid, self.lam[self.mid])

    @property
    def b_top(self) -> np.ndarray:
        return self.component(self.top, self.lam[self.top])


def spectral_split(tensor: MomentTensor, eps: float = EPS_ONE) -> SpectralSplit:
    bmat = tensor.bmat
    sym = -(bmat + bmat.T) / 2.0
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as err:
        raise SvdFailure(f"eigendecomposition failed: {err}") from None
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    ok = bool(vals.min() >= -LAMBDA_SLACK and vals.max() <= 1.0 + LAMBDA_SLACK)
    mid = (vals > EPS_ZERO) & (vals < 1.0 - eps)
    top = vals >= 1.0 - eps
    phi = vals[mid] / (1.0 - vals[mid])
    lam_mid = vals[mid]
    return SpectralSplit(
        lam=vals,
        u=vecs,
        mid=mid,
        top=top,
        phi=phi,
        lam_mid_max=float(lam_mid.max()) if lam_mid.size else 0.0,
        in_unit_interval=ok,
        asymmetry=tensor.asymmetry,
    )


def series_closed_form(split: SpectralSplit) -> np.ndarray:
    """bbar_inf = -u_mid diag(phi) u_mid'; the sum of the alternating series
    X - X^2 + X^3 - ... over the 0 < lam < 1 part of X = -bbar."""
    return split.component(split.mid, split.phi)


def series_partial(b_mid: np.ndarray, n_terms: int) -> np.ndarray:
    """First n_terms of the alternating series, by direct matrix powers.

    Truncation error is bounded by lam_max^(n_terms) / (1 - lam_max) in
    spectral norm, giving an independent check of the closed form.
    """
    acc = np.zeros_like(b_mid)
    power = np.eye(b_mid.shape[0])
    sign = 1.0
    for _ in range(n_terms):
        power = power @ b_mid
        acc += sign * power
        sign = -sign
    return acc


# ---------------------------------------------------------------------------
# bias estimation and OC2


@dataclass(frozen=True)
class BiasKernels:
    """Contractions of the tensor parts against o/p, reused across assignments."""

    g_inf: np.ndarray
    g_top: np.ndarray


def bias_kernels(split: SpectralSplit, p: np.ndarray, q: np.ndarray) -> BiasKernels:
    return BiasKernels(
        g_inf=contract_bias(series_closed_form(split), p, q),
        g_top=contract_bias(split.b_top, p, q),
    )


@dataclass(frozen=True)
class BiasEstimate:
    term_residual: float  # (My)' g_inf (My)
    term_raw: float  # (Ry)' g_top (Ry); conjectured zero for every assignment
    total: float


def bias_estimate(
    spec: EstimatorSpec,
    pi: np.ndarray,
    kernels: BiasKernels,
    r: np.ndarray,
    y: np.ndarray,
) -> BiasEstimate:
    """Unbiased estimate of E[OC1 - GS] for one assignment."""
    my = residualize(spec, pi, r, y)
    ry = r * y
    t1 = float(my @ kernels.g_inf @ my)
    t2 = float(ry @ kernels.g_top @ ry)
    return BiasEstimate(term_residual=t1, term_raw=t2, total=t1 + t2)


def oc2(
    spec: EstimatorSpec,
    pi: np.ndarray,
    q: np.ndarray,
    kernels: BiasKernels,
    r: np.ndarray,
    y: np.ndarray,
) -> float:
    """Single-form OC2: (My)' (q - g_inf) (My).

    Equals OC1 minus the full bias estimate whenever the raw term vanishes,
    which the diagnostics check per assignment.
    """
    my = residualize(spec, pi, r, y)
    return float(my @ (q - kernels.g_inf) @ my)
