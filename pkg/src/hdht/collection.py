"""Model collections: deterministic families and the Lasso-path family.

The data-driven family is read off the Lasso regularization path of the
joint regression of the stacked responses on

    W = [[X1,  X1],
         [X2, -X2]]

whose first block of coefficients carries the mean effect ``(b1 + b2) / 2``
and whose second block carries the half-difference ``(b1 - b2) / 2``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from hdht._kernels import lars_kernel
from hdht.data import Subset, TwoSampleData
from hdht.errors import BudgetExceeded, DimensionMismatch

S1 = "S1"
SLEQK = "SleqK"
LASSO = "Lasso"

ENUMERATION_BUDGET = 2_000_000


@dataclass(frozen=True)
class ModelCollection:
    """An ordered, duplicate-free family of covariate subsets.

    ``d_max`` is the maximal size of the ambient deterministic family the
    collection was drawn from (``S_{<=d_max}``); Bonferroni weights are
    spread over that ambient family.
    """

    subsets: tuple[Subset, ...]
    origin: str
    d_max: int

    def __len__(self) -> int:
        return len(self.subsets)

    def __iter__(self):
        return iter(self.subsets)

    def __contains__(self, s) -> bool:
        return tuple(s) in set(self.subsets)


def _dedup(subsets: Iterable[Subset]) -> tuple[Subset, ...]:
    seen = set()
    out = []
    for s in subsets:
        if s and s not in seen:
            seen.add(s)
            out.append(s)
    return tuple(out)


def default_d_max(data: TwoSampleData) -> int:
    return min(data.n1, data.n2) // 2


def deterministic_collection(
    kind: str, p: int, k: int = 1, budget: int = ENUMERATION_BUDGET
) -> ModelCollection:
    """All subsets of size 1 (``kind="S1"``) or of size ``1..k`` (``kind="SleqK"``).

    Subsets are listed by size, then lexicographically.
    """
    if kind == S1:
        return ModelCollection(tuple((i,) for i in range(p)), S1, 1)
    if kind != SLEQK:
        raise ValueError(f"unknown deterministic collection {kind!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    cost = sum(math.comb(p, j) * j for j in range(1, k + 1))
    if cost > budget:
        raise BudgetExceeded(f"enumerating S_<={k} for p={p} needs {cost} index slots")
    subsets = tuple(
        c for j in range(1, k + 1) for c in itertools.combinations(range(p), j)
    )
    return ModelCollection(subsets, SLEQK, k)


# -- reparametrized design ----------------------------------------------------


@dataclass(frozen=True)
class ReparamDesign:
    w: np.ndarray
    y: np.ndarray
    p: int


def build_reparam(data: TwoSampleData) -> ReparamDesign:
    if data.x1.shape[1] != data.x2.shape[1]:
        raise DimensionMismatch("samples have different numbers of covariates")
    top = np.hstack([data.x1, data.x1])
    bottom = np.hstack([data.x2, -data.x2])
    return ReparamDesign(np.vstack([top, bottom]), np.concatenate([data.y1, data.y2]), data.p)


# -- Lasso path ---------------------------------------------------------------


@dataclass(frozen=True)
class LassoPath:
    """Piecewise-linear Lasso path for ``||y - W theta||^2 + lam * |theta|_1``.

    ``lambdas[k]`` are the knots, strictly decreasing; ``coefs[k]`` is the
    solution at ``lambdas[k]`` and ``supports[k]`` the active set on the open
    interval ``(lambdas[k+1], lambdas[k])``.  When the path was followed to
    the end the last knot is ``0``.
    """

    lambdas: np.ndarray
    coefs: np.ndarray
    supports: tuple[tuple[int, ...], ...]
    p: int
    complete: bool = False
    n_drops: int = field(default=0)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.lambdas[self.lambdas > 0]

    def support_pair(self, k: int) -> tuple[frozenset, frozenset]:
        """Covariate labels active in the mean block and the difference block."""
        sup = self.supports[k]
        return (
            frozenset(j for j in sup if j < self.p),
            frozenset(j - self.p for j in sup if j >= self.p),
        )

    def coef_at(self, lam: float) -> np.ndarray:
        lams = self.lambdas
        if lam >= lams[0]:
            return np.zeros(self.coefs.shape[1])
        if lam < lams[-1]:
            raise ValueError(f"path was not followed below lambda={lams[-1]:.6g}")
        k = int(np.searchsorted(-lams, -lam, side="right")) - 1
        if lams[k] == lam or k + 1 >= len(lams):
            return self.coefs[k].copy()
        t = (lams[k] - lam) / (lams[k] - lams[k + 1])
        return (1 - t) * self.coefs[k] + t * self.coefs[k + 1]


def lars_path(
    design: ReparamDesign,
    max_active: int | None = None,
    max_covariates: int | None = None,
    standardize: bool = False,
) -> LassoPath:
    """Homotopy (LARS with drops) Lasso path of ``design``.

    The path stops once ``max_active`` coefficients are active, or once the
    active set touches ``max_covariates`` distinct covariates (a column
    ``j`` and ``j + p`` count as one covariate).  Entry ties are broken in
    favour of the lowest column index.
    """
    w = design.w
    p = design.p
    nvar = w.shape[1]
    scale = np.ones(nvar)
    if standardize:
        norms = np.sqrt((w * w).sum(axis=0))
        scale = np.where(norms > 0, 1.0 / norms, 1.0)
        w = w * scale
    if max_active is None:
        max_active = min(w.shape)
    gram = w.T @ w
    wty = w.T @ design.y
    lams, coefs, masks, n_drops, complete = lars_kernel(
        gram,
        wty,
        int(max_active),
        -1 if max_covariates is None else int(max_covariates),
        int(p),
        scale,
    )
    return LassoPath(
        lams.copy(),
        coefs.copy(),
        tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in masks),
        p,
        complete=bool(complete),
        n_drops=int(n_drops),
    )


def build_lasso_collection(
    data: TwoSampleData, d_max: int | None = None, standardize: bool = False
) -> ModelCollection:
    """Lasso-path collection: unions and difference supports along the path, plus all singletons.

    Path knots are scanned in decreasing order of ``lambda`` while the union
    of the two supports has fewer than ``d_max`` covariates.
    """
    if d_max is None:
        d_max = default_d_max(data)
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    path = lars_path(
        build_reparam(data),
        max_active=min(data.n1 + data.n2, 2 * data.p),
        max_covariates=d_max,
        standardize=standardize,
    )
    unions: list[Subset] = []
    diffs: list[Subset] = []
    for k in range(len(path.supports)):
        if path.lambdas[k] <= 0:
            break
        mean_part, diff_part = path.support_pair(k)
        union = mean_part | diff_part
        if len(union) >= d_max:
            break
        unions.append(tuple(sorted(union)))
        diffs.append(tuple(sorted(diff_part)))
    ordered = [s for pair in zip(unions, diffs) for s in pair]
    ordered += [(i,) for i in range(data.p)]
    return ModelCollection(_dedup(ordered), LASSO, d_max)


def build_collection(data: TwoSampleData, kind: str, k: int | None = None, d_max: int | None = None,
                     standardize: bool = False) -> ModelCollection:
    """Dispatch on the collection kind used by the test engine."""
    if kind == LASSO:
        return build_lasso_collection(data, d_max, standardize)
    if kind == S1:
        return deterministic_collection(S1, data.p)
    if kind == SLEQK:
        return deterministic_collection(SLEQK, data.p, k or 1)
    raise ValueError(f"unknown collection kind {kind!r}")


@dataclass(frozen=True)
class CollectionBuilder:
    """Picklable collection procedure, re-applied to every permuted dataset."""

    kind: str = LASSO
    k: int | None = None
    d_max: int | None = None
    standardize: bool = False

    def __call__(self, data: TwoSampleData) -> ModelCollection:
        return build_collection(data, self.kind, self.k, self.d_max, self.standardize)
