"""Per-subset test statistics and their p-values.

For a covariate subset ``S`` the two samples are regressed on ``X_S`` and
compared through three statistics: a variance ratio ``f_v`` and two
cross-prediction statistics ``f_1``/``f_2``.  ``f_v`` has an exact p-value
through the Fisher distribution; ``f_1``/``f_2`` get a closed-form upper
bound obtained from an exponential-moment (Chernoff) argument on a
weighted chi-square ratio.

Two code paths exist.  The single-subset functions (:func:`compute_statistics`,
:func:`eigen_spectrum`, ...) go through :func:`hdht.numkit.least_squares` and
are the readable reference.  :func:`score_subsets` evaluates a whole
collection through a compiled kernel; the test engine and the permutation
loops use it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from hdht import numkit
from hdht._kernels import score_kernel
from hdht.data import Subset, TwoSampleData
from hdht.errors import RankDeficient, SubsetTooLarge

PVALUE_FLOOR = 1e-300
CONSTANT_SPECTRUM_TOL = 1e-12


@dataclass(frozen=True)
class StatTriple:
    f_v: float
    f_1: float
    f_2: float
    subset_size: int


@dataclass(frozen=True)
class PValueTriple:
    q_v: float
    q_1: float
    q_2: float


@dataclass(frozen=True)
class EigenSpectrum:
    """Positive eigenvalues weighting the chi-square terms of ``f_1`` (or ``f_2``)."""

    a: np.ndarray

    @property
    def l1_norm(self) -> float:
        return float(np.sum(self.a))

    @property
    def sup_norm(self) -> float:
        return float(np.max(self.a))

    @property
    def sq_norm(self) -> float:
        return float(np.sum(self.a**2))


def check_subset(data: TwoSampleData, s: Subset, allow_empty: bool = False) -> None:
    if not s and not allow_empty:
        raise SubsetTooLarge("the empty subset is excluded unless allow_empty=True")
    if 2 * len(s) > min(data.n1, data.n2):
        raise SubsetTooLarge(
            f"|S|={len(s)} violates 2|S| <= min(n1, n2) = {min(data.n1, data.n2)}"
        )
    if s and (s[0] < 0 or s[-1] >= data.p):
        raise IndexError(f"subset {s} out of range for p={data.p}")


def _fit(x: np.ndarray, y: np.ndarray, s: Subset) -> numkit.LeastSquaresFit:
    fit = numkit.least_squares(x[:, list(s)], y)
    if fit.residual_sum_squares <= 0.0:
        raise RankDeficient("zero residual sum of squares")
    return fit


def compute_statistics(
    data: TwoSampleData, s: Subset, allow_empty: bool = False
) -> StatTriple:
    """``(f_v, f_1, f_2)`` for subset ``s`` (0-based covariate indices)."""
    check_subset(data, s, allow_empty)
    fit1 = _fit(data.x1, data.y1, s)
    fit2 = _fit(data.x2, data.y2, s)
    v1 = fit1.residual_sum_squares / data.n1
    v2 = fit2.residual_sum_squares / data.n2
    f_v = numkit.g(v1 / v2)
    if not s:
        return StatTriple(f_v, 0.0, 0.0, 0)
    delta = fit1.coefficients - fit2.coefficients
    cols = list(s)
    cross2 = data.x2[:, cols] @ delta
    cross1 = data.x1[:, cols] @ delta
    f_1 = float(cross2 @ cross2) / data.n2 / v1
    f_2 = float(cross1 @ cross1) / data.n1 / v2
    return StatTriple(float(f_v), f_1, f_2, len(s))


def pvalue_variance(t: StatTriple, n1: int, n2: int) -> float:
    """Exact conditional p-value of ``f_v`` under the subset null."""
    return float(_pvalue_variance(np.asarray(t.f_v), n1, n2, t.subset_size))


def _pvalue_variance(f_v: np.ndarray, n1: int, n2: int, s) -> np.ndarray:
    x = numkit.g_inverse(np.maximum(f_v, 0.0))
    d1, d2 = n1 - s, n2 - s
    q = numkit.fisher_sf(d1, d2, x * n1 * d2 / (n2 * d1)) + numkit.fisher_sf(
        d2, d1, x * n2 * d1 / (n1 * d2)
    )
    return np.clip(q, PVALUE_FLOOR, 1.0)


def eigen_spectrum(data: TwoSampleData, s: Subset, direction: int) -> EigenSpectrum:
    """Weights ``a`` of the null law of ``f_1`` (direction 1) or ``f_2`` (direction 2).

    The ``n2 x n2`` matrix ``X2 (A1^-1 + A2^-1) X2^T`` (``Ai = Xi^T Xi``) has
    the same nonzero spectrum as the ``|S| x |S|`` matrix ``L^T A2 L`` where
    ``L L^T = A1^-1 + A2^-1``; the latter is what gets diagonalized.
    """
    if direction not in (1, 2):
        raise ValueError("direction must be 1 or 2")
    check_subset(data, s)
    cols = list(s)
    xs1, xs2 = data.x1[:, cols], data.x2[:, cols]
    for xs in (xs1, xs2):
        numkit.least_squares(xs, np.zeros(xs.shape[0]))  # rank check
    a1 = xs1.T @ xs1
    a2 = xs2.T @ xs2
    b = linalg.inv(a1) + linalg.inv(a2)
    chol = linalg.cholesky(0.5 * (b + b.T), lower=True)
    if direction == 1:
        num, den, core = data.n1, data.n2, a2
    else:
        num, den, core = data.n2, data.n1, a1
    m = chol.T @ core @ chol
    k = len(s)
    eig = numkit.symmetric_eigenvalues(0.5 * (m + m.T)) * num / (den * (num - k))
    if np.any(eig <= 0):
        raise RankDeficient("nonpositive eigenvalue in the cross-prediction spectrum")
    return EigenSpectrum(eig)


def laplace_tail_bound(u: float, spec: EigenSpectrum, n1: int, subset_size: int) -> float:
    """Upper bound on ``P(sum_i a_i Z_i^2 / (W / (n1 - |S|)) > u)``.

    ``Z_i`` are standard normals and ``W`` an independent chi-square with
    ``n1 - |S|`` degrees of freedom; ``n1`` is the size of the sample whose
    residual variance sits in the denominator.
    """
    if u < 0:
        raise ValueError("u must be nonnegative")
    a = np.asarray(spec.a, dtype=float)[None, :]
    return float(_laplace_bound(np.array([u], dtype=float), a, n1 - subset_size)[0])


def laplace_lambda(u: float, spec: EigenSpectrum, n1: int, subset_size: int) -> float:
    """The exponential-moment parameter used by :func:`laplace_tail_bound` (``u > |a|_1``)."""
    a = np.asarray(spec.a, dtype=float)[None, :]
    return float(_laplace_lambda(np.array([u], dtype=float), a, n1 - subset_size)[0])


def _laplace_lambda(u: np.ndarray, a: np.ndarray, dof) -> np.ndarray:
    # rows of ``a`` may be right-padded with zeros; padding does not contribute
    l1 = a.sum(axis=1)
    sup = a.max(axis=1)
    inf = np.where(a > 0, a, np.inf).min(axis=1)
    sq = (a * a).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_const = (u - l1) / (2.0 * u * (sup + l1 / dof))
        kappa = l1 - sq / sup
        b = l1 * u / (sup * dof) + u + sq / sup - l1
        disc = b * b - 4.0 * u * (u - l1) * kappa / (dof * sup)
        # rounding can push a vanishing discriminant below zero
        disc = np.maximum(disc, 0.0)
        # (b - sqrt(disc)) / (4 u kappa / dof), rewritten without cancellation
        lam_quad = (u - l1) / (sup * (b + np.sqrt(disc)))
    constant = (sup - inf) <= CONSTANT_SPECTRUM_TOL * sup
    return np.where(constant, lam_const, lam_quad)


def _laplace_bound(u: np.ndarray, a: np.ndarray, dof) -> np.ndarray:
    l1 = a.sum(axis=1)
    out = np.ones(u.shape[0])
    active = u > l1
    if not np.any(active):
        return out
    ua, aa = u[active], a[active]
    dof = np.broadcast_to(np.asarray(dof, dtype=float), u.shape)[active]
    lam = _laplace_lambda(ua, aa, dof)
    lam = np.minimum(lam, (1.0 - 1e-15) / (2.0 * aa.max(axis=1)))
    log_q = -0.5 * np.log1p(-2.0 * lam[:, None] * aa).sum(axis=1) - 0.5 * dof * np.log1p(
        2.0 * lam * ua / dof
    )
    out[active] = np.exp(np.minimum(log_q, 0.0))
    return np.clip(out, PVALUE_FLOOR, 1.0)


def pvalue_coefficients(
    t: StatTriple, data: TwoSampleData, s: Subset
) -> tuple[float, float]:
    """Upper-bound p-values ``(q_1, q_2)`` of ``f_1`` and ``f_2``."""
    if t.subset_size == 0:
        return 1.0, 1.0
    k = len(s)
    q1 = laplace_tail_bound(t.f_1, eigen_spectrum(data, s, 1), data.n1, k)
    q2 = laplace_tail_bound(t.f_2, eigen_spectrum(data, s, 2), data.n2, k)
    return q1, q2


def subset_pvalues(data: TwoSampleData, s: Subset) -> tuple[StatTriple, PValueTriple]:
    t = compute_statistics(data, s)
    q1, q2 = pvalue_coefficients(t, data, s)
    return t, PValueTriple(pvalue_variance(t, data.n1, data.n2), q1, q2)


# -- batched evaluation -------------------------------------------------------


@dataclass
class SubsetScores:
    """Statistics and p-values for a list of subsets, as parallel arrays.

    Entries of subsets that could not be evaluated (rank-deficient restricted
    designs, perfect fits) have ``valid == False`` and NaN statistics.
    ``fisher``/``q_fisher`` are only filled when requested.
    """

    subsets: list[Subset]
    sizes: np.ndarray
    valid: np.ndarray
    f_v: np.ndarray
    f_1: np.ndarray
    f_2: np.ndarray
    q_v: np.ndarray
    q_1: np.ndarray
    q_2: np.ndarray
    fisher: np.ndarray | None = None
    q_fisher: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.subsets)


def score_subsets(
    data: TwoSampleData,
    subsets: Sequence[Subset],
    fisher: bool = False,
    allow_empty: bool = False,
) -> SubsetScores:
    """Evaluate ``(f_v, f_1, f_2)``, their p-values and optionally the Fisher baseline.

    Statistics come from a compiled per-subset Householder QR
    (:func:`hdht._kernels.score_kernel`); p-values are computed in one
    vectorized pass.
    """
    subsets = list(subsets)
    nsub = len(subsets)
    n1, n2 = data.n1, data.n2
    for s in subsets:
        check_subset(data, s, allow_empty)
    sizes = np.array([len(s) for s in subsets], dtype=np.int64)
    kk = int(sizes.max(initial=0))
    idx = np.zeros((nsub, max(kk, 1)), dtype=np.int64)
    for j, s in enumerate(subsets):
        idx[j, : len(s)] = s

    empty = sizes == 0
    nonempty = ~empty
    f_v, f_1, f_2, a1, a2, fi, valid = score_kernel(
        data.x1, data.y1, data.x2, data.y2, idx[nonempty], sizes[nonempty],
        fisher, numkit.RANK_TOL,
    )
    if np.any(empty):
        f_v, f_1, f_2, fi = (_scatter(v, nonempty, 0.0) for v in (f_v, f_1, f_2, fi))
        a1, a2 = (_scatter(v, nonempty, 0.0) for v in (a1, a2))
        valid = _scatter(valid, nonempty, False)
        rss1 = float(data.y1 @ data.y1)
        rss2 = float(data.y2 @ data.y2)
        if rss1 > 0 and rss2 > 0:
            ratio = (rss1 / n1) / (rss2 / n2)
            f_v[empty] = ratio + 1.0 / ratio - 2.0
            valid[empty] = True

    q_v = _pvalue_variance(f_v, n1, n2, sizes)
    q_1 = np.ones(nsub)
    q_2 = np.ones(nsub)
    if np.any(nonempty):
        q_1[nonempty] = _laplace_bound(f_1[nonempty], a1[nonempty], n1 - sizes[nonempty])
        q_2[nonempty] = _laplace_bound(f_2[nonempty], a2[nonempty], n2 - sizes[nonempty])
    out = dict(f_v=f_v, f_1=f_1, f_2=f_2, q_v=q_v, q_1=q_1, q_2=q_2)
    if fisher:
        valid = valid & nonempty
        safe = np.maximum(sizes, 1)
        out["fisher"] = fi
        out["q_fisher"] = np.clip(
            numkit.fisher_sf(safe, n1 + n2 - 2 * safe, fi), PVALUE_FLOOR, 1.0
        )
    for key in out:
        out[key] = np.where(valid, out[key], np.nan)
    return SubsetScores(subsets=subsets, sizes=sizes, valid=valid, **out)


def _scatter(values: np.ndarray, mask: np.ndarray, fill) -> np.ndarray:
    out = np.full((mask.size,) + values.shape[1:], fill, dtype=values.dtype)
    out[mask] = values
    return out
