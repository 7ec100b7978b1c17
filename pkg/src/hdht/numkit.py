"""Small dense linear-algebra and distribution primitives.

Everything here works on plain ``numpy`` arrays; the matrices in play are
at most a few hundred rows by a few dozen columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from hdht.errors import NotSymmetric, RankDeficient

RANK_TOL = 1e-10
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class LeastSquaresFit:
    coefficients: np.ndarray
    residual_sum_squares: float
    rank: int


def least_squares(design: np.ndarray, response: np.ndarray) -> LeastSquaresFit:
    """Ordinary least squares through a column-pivoted QR factorization.

    Raises
    ------
    RankDeficient
        If a pivot of ``R`` falls below ``1e-10`` times the largest one.
    """
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    if design.ndim != 2 or response.shape != (design.shape[0],):
        raise ValueError("design must be (n, k) and response (n,)")
    n, k = design.shape
    if k == 0:
        return LeastSquaresFit(np.zeros(0), float(response @ response), 0)
    q, r, piv = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_TOL * diag[0])) if diag[0] > 0 else 0
    if rank < k:
        raise RankDeficient(f"numerical rank {rank} < {k} columns")
    qty = q.T @ response
    coef = np.empty(k)
    coef[piv] = linalg.solve_triangular(r, qty, check_finite=False)
    resid = response - design @ coef
    return LeastSquaresFit(coef, float(resid @ resid), rank)


def symmetric_eigenvalues(m: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, sorted in descending order."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetric("matrix is not square")
    scale = max(np.abs(m).max(initial=0.0), 1.0)
    if np.abs(m - m.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise NotSymmetric("matrix is not symmetric")
    return np.linalg.eigvalsh(0.5 * (m + m.T))[::-1]


def fisher_sf(d1, d2, u):
    """Upper tail ``P(F > u)`` of a Fisher variable with ``(d1, d2)`` degrees of freedom.

    Uses the identity ``P(F > u) = I_{d2 / (d2 + d1 u)}(d2 / 2, d1 / 2)``
    with the regularized incomplete beta function.  Broadcasts over arrays.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(d1 < 1) or np.any(d2 < 1):
        raise ValueError("degrees of freedom must be >= 1")
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    with np.errstate(over="ignore", invalid="ignore"):
        x = d2 / (d2 + d1 * u)
    x = np.where(np.isinf(u), 0.0, x)
    out = special.betainc(d2 / 2.0, d1 / 2.0, x)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def g(x):
    """``g(x) = x + 1/x - 2``, nonnegative on ``(0, inf)`` with minimum 0 at 1."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("g is defined on positive reals")
    out = x + 1.0 / x - 2.0
    return float(out) if out.ndim == 0 else out


def g_inverse(y):
    """Root of ``g(x) = y`` lying in ``[1, inf)``."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("g_inverse is defined on nonnegative reals")
    out = 1.0 + 0.5 * y + np.sqrt(y + 0.25 * y * y)
    return float(out) if out.ndim == 0 else out


def log_binom(p, k):
    """``log C(p, k)`` through log-gamma; broadcasts."""
    p = np.asarray(p, dtype=float)
    k = np.asarray(k, dtype=float)
    out = special.gammaln(p + 1) - special.gammaln(k + 1) - special.gammaln(p - k + 1)
    return float(out) if out.ndim == 0 else out
