"""Conservative bounding of the design kernel on zero-probability cells.

Cells with p_ab = 0 (never jointly observed, e.g. the two potential outcomes
of one unit) cannot be weighted by 1/p_ab.  The arithmetic-geometric move
zeroes each such off-diagonal cell and adds its magnitude to both incident
diagonals, which dominates the original kernel in the PSD order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonEstimableCell, ShapeMismatch
from .kernel import safe_divide


@dataclass(frozen=True)
class BoundedMatrix:
    """d_tilde >= d (PSD order) with d_tilde = 0 wherever p = 0 off-diagonal."""

    d_tilde: np.ndarray
    d: np.ndarray
    p: np.ndarray
    moved: np.ndarray  # boolean mask of absorbed off-diagonal cells
    diag_added: np.ndarray  # per-slot magnitude added on the diagonal


def amgm_bound(d: np.ndarray, p: np.ndarray) -> BoundedMatrix:
    """Absorb every off-diagonal cell with p_ab = 0 into the diagonal.

    Each absorbed symmetric pair changes the kernel by
    [[|d_ab|, -d_ab], [-d_ab, |d_ab|]] on slots (a, b), which is PSD, so the
    output dominates the input no matter the sign pattern.
    """
    d = np.asarray(d, dtype=float)
    p = np.asarray(p, dtype=float)
    if d.shape != p.shape or d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ShapeMismatch("d and p must be equal square matrices")
    off = ~np.eye(d.shape[0], dtype=bool)
    moved = off & (p == 0.0)
    d_tilde = np.where(moved, 0.0, d)
    diag_added = np.sum(np.abs(d) * moved, axis=1)
    d_tilde[np.diag_indices_from(d_tilde)] += diag_added
    return BoundedMatrix(d_tilde=d_tilde, d=d, p=p, moved=moved, diag_added=diag_added)


@dataclass(frozen=True)
class BoundReport:
    min_eig_diff: float
    dominates: bool
    max_abs_on_zero_cells: float
    estimable: bool


def verify_bound(bound: BoundedMatrix, tol: float = 1e-10) -> BoundReport:
    """Check d_tilde - d is PSD and d_tilde vanishes on every p = 0 cell."""
    diff = bound.d_tilde - bound.d
    min_eig = float(np.linalg.eigvalsh((diff + diff.T) / 2.0)[0])
    zero_cells = bound.p == 0.0
    resid = float(np.max(np.abs(bound.d_tilde * zero_cells))) if zero_cells.any() else 0.0
    return BoundReport(
        min_eig_diff=min_eig,
        dominates=min_eig >= -tol,
        max_abs_on_zero_cells=resid,
        estimable=resid == 0.0,
    )


def weight_by_p(mat: np.ndarray, p: np.ndarray, atol: float = 0.0) -> np.ndarray:
    """Elementwise mat / p; requires mat = 0 wherever p = 0.

    A nonzero value over a zero-probability cell has no unbiased estimator,
    so this raises NonEstimableCell instead of guessing.
    """
    mat = np.asarray(mat, dtype=float)
    p = np.asarray(p, dtype=float)
    if mat.shape != p.shape:
        raise ShapeMismatch(f"shape {mat.shape} vs {p.shape}")
    bad = (p == 0.0) & (np.abs(mat) > atol)
    if np.any(bad):
        a, b = np.argwhere(bad)[0]
        raise NonEstimableCell(
            f"{int(np.sum(bad))} cells carry weight on zero-probability pairs, "
            f"first at ({a}, {b})"
        )
    return safe_divide(mat, p)
