"""Rejection thresholds: Bonferroni weights and permutation-estimated constants.

Thresholds are kept in log scale.  For a subset ``S`` of size ``s`` the
three thresholds ``(alpha_V, alpha_1, alpha_2)`` depend on ``S`` only through
``s`` and ``log C(p, s)``.

Two statistic families are supported.  ``"clr"`` is the three-statistic
procedure; ``"fisher"`` is the single-statistic baseline, whose threshold
occupies the ``V`` slot and whose ``1``/``2`` slots are ``-inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Mapping, Sequence

import numpy as np

from hdht import _parallel
from hdht.collection import ModelCollection
from hdht.data import Subset, TwoSampleData
from hdht.errors import MissingThreshold
from hdht.numkit import log_binom
from hdht.stats import PValueTriple, SubsetScores, score_subsets

BONFERRONI = "bonferroni"
PERMUTATION = "permutation"
CLR = "clr"
FISHER = "fisher"

MIN_DRAWS = 20
STATISTIC_NAMES = ("V", "1", "2")


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


@dataclass(frozen=True)
class PermutationDraw:
    """One permutation draw and its weighted minima (log scale).

    ``log_c_v = min_S log(q_V,S C(p,|S|))`` and ``log_c_1`` is the same with
    ``min(q_1, q_2)``.  For the Fisher family ``log_c_v`` carries the
    single statistic and ``log_c_1`` is ``+inf``.
    """

    index: int
    permutation: np.ndarray = field(repr=False)
    log_c_v: float
    log_c_1: float

    @property
    def c_v(self) -> float:
        return math.exp(self.log_c_v) if self.log_c_v < math.inf else math.inf

    @property
    def c_1(self) -> float:
        return math.exp(self.log_c_1) if self.log_c_1 < math.inf else math.inf


@dataclass(frozen=True)
class CalibrationThresholds:
    """Per-size log thresholds for one calibration scheme.

    Bonferroni thresholds are defined only for sizes ``1..d_max`` of the
    ambient family; permutation thresholds ``log C_i - log C(p, s)`` exist
    for every size.
    """

    scheme: str
    alpha: float
    p: int
    statistic: str = CLR
    d_max: int | None = None
    log_c_v: float | None = None
    log_c_1: float | None = None
    draws: tuple[PermutationDraw, ...] = field(default=(), repr=False)

    @property
    def constants(self) -> tuple[float, float] | None:
        if self.scheme != PERMUTATION:
            return None
        return (float(np.exp(self.log_c_v)), float(np.exp(self.log_c_1)))

    def log_thresholds(self, sizes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Log thresholds ``(V, 1, 2)`` for an array of subset sizes."""
        sizes = np.asarray(sizes, dtype=int)
        lc = log_binom(self.p, sizes)
        if self.scheme == BONFERRONI:
            bad = (sizes < 1) | (sizes > self.d_max)
            if np.any(bad):
                raise MissingThreshold(
                    f"subset size {int(sizes[bad][0])} outside the ambient family 1..{self.d_max}"
                )
            la = math.log(self.alpha)
            if self.statistic == FISHER:
                lv = la - math.log(self.d_max) - lc
                l1 = np.full_like(lv, -np.inf)
            else:
                lv = la - math.log(2 * self.d_max) - lc
                l1 = la - math.log(4 * self.d_max) - lc
        else:
            lv = self.log_c_v - lc
            l1 = -np.inf if self.statistic == FISHER else self.log_c_1 - lc
        lv = np.broadcast_to(np.asarray(lv, dtype=float), sizes.shape).copy()
        l1 = np.broadcast_to(np.asarray(l1, dtype=float), sizes.shape).copy()
        return lv, l1, l1.copy()

    def per_subset(self, subsets: Sequence[Subset]) -> dict[Subset, tuple[float, float, float]]:
        lv, l1, l2 = self.log_thresholds([len(s) for s in subsets])
        return {s: (lv[j], l1[j], l2[j]) for j, s in enumerate(subsets)}


def bonferroni_thresholds(
    collection: ModelCollection | None, d_max: int, p: int, alpha: float, statistic: str = CLR
) -> CalibrationThresholds:
    """Weights ``alpha / (2 d_max) C(p,s)^-1`` for ``V`` and half of that for ``1`` and ``2``.

    The budget is spread over the ambient family of all subsets of size
    ``1..d_max``, whatever subsets ``collection`` happens to contain.
    """
    _check_alpha(alpha)
    if d_max < 1:
        raise ValueError("d_max must be >= 1")
    th = CalibrationThresholds(BONFERRONI, alpha, p, statistic, d_max=d_max)
    if collection is not None and len(collection):
        th.log_thresholds([len(s) for s in collection])
    return th


# -- permutation --------------------------------------------------------------


def draw_permutation(seed: int, index: int, n: int) -> np.ndarray:
    """Permutation number ``index`` of the stream keyed by ``seed``."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    return np.random.Generator(np.random.Philox(ss)).permutation(n)


def weighted_minima(scores: SubsetScores, p: int, statistic: str = CLR) -> tuple[float, float]:
    """``min_S log(q C(p,|S|))`` for the ``V`` part and the ``(1, 2)`` part."""
    ok = scores.valid
    if not np.any(ok):
        return math.inf, math.inf
    lc = log_binom(p, scores.sizes[ok])
    if statistic == FISHER:
        return float(np.min(np.log(scores.q_fisher[ok]) + lc)), math.inf
    with np.errstate(divide="ignore"):
        mv = np.min(np.log(scores.q_v[ok]) + lc)
        m1 = np.min(np.log(np.minimum(scores.q_1[ok], scores.q_2[ok])) + lc)
    return float(mv), float(m1)


def _one_draw(
    index: int,
    data: TwoSampleData,
    builder: Callable[[TwoSampleData], ModelCollection],
    seed: int,
    statistic: str,
) -> PermutationDraw:
    perm = draw_permutation(seed, index, data.n1 + data.n2)
    permuted = data.permuted(perm)
    coll = builder(permuted)
    if len(coll) == 0:
        return PermutationDraw(index, perm, math.inf, math.inf)
    scores = score_subsets(permuted, coll.subsets, fisher=statistic == FISHER)
    lv, l1 = weighted_minima(scores, data.p, statistic)
    return PermutationDraw(index, perm, lv, l1)


def order_statistic_index(level: float, b: int) -> int:
    """1-based order statistic ``max(1, floor(level * b))``."""
    return max(1, int(math.floor(level * b * (1 + 1e-12))))


def permutation_calibrate(
    data: TwoSampleData,
    builder: Callable[[TwoSampleData], ModelCollection],
    b: int,
    alpha: float,
    seed: int,
    statistic: str = CLR,
    threads: int | None = None,
) -> CalibrationThresholds:
    """Estimate the scheme constants from ``b`` row permutations of the pooled sample.

    ``builder`` is re-run on every permuted dataset.  The constants are the
    ``max(1, floor(alpha/2 * b))``-th smallest per-draw minima (``alpha * b``
    for the single-statistic Fisher family).
    """
    _check_alpha(alpha)
    if b < MIN_DRAWS:
        raise ValueError(f"b must be >= {MIN_DRAWS}, got {b}")
    work = partial(_one_draw, data=data, builder=builder, seed=seed, statistic=statistic)
    draws = tuple(_parallel.pmap(work, range(b), threads))
    level = alpha if statistic == FISHER else alpha / 2.0
    k = order_statistic_index(level, b)
    cv = float(np.sort([d.log_c_v for d in draws])[k - 1])
    c1 = float(np.sort([d.log_c_1 for d in draws])[k - 1])
    return CalibrationThresholds(
        PERMUTATION, alpha, data.p, statistic, log_c_v=cv, log_c_1=c1, draws=draws
    )


# -- decision -----------------------------------------------------------------


@dataclass(frozen=True)
class Decision:
    reject: bool
    witness_subset: Subset | None = None
    witness_statistic: str | None = None


def _as_log_arrays(pvals, statistic: str):
    """``(subsets, sizes, logq[nsub, 3])`` from SubsetScores or a mapping of PValueTriple."""
    if isinstance(pvals, SubsetScores):
        ok = pvals.valid
        subsets = [s for s, v in zip(pvals.subsets, ok) if v]
        if statistic == FISHER:
            q = np.column_stack([pvals.q_fisher[ok], np.full((ok.sum(), 2), np.inf)])
        else:
            q = np.column_stack([pvals.q_v[ok], pvals.q_1[ok], pvals.q_2[ok]])
    else:
        subsets = list(pvals)
        q = np.array([[pvals[s].q_v, pvals[s].q_1, pvals[s].q_2] for s in subsets], dtype=float)
        q = q.reshape(len(subsets), 3)
    sizes = np.array([len(s) for s in subsets], dtype=int)
    with np.errstate(divide="ignore"):
        return subsets, sizes, np.log(q)


def decide(
    pvals: SubsetScores | Mapping[Subset, PValueTriple], thresholds: CalibrationThresholds
) -> Decision:
    """Reject iff some ``log q_i,S <= log alpha_i,S``.

    The witness is the first achieving ``(S, i)`` in collection order, with
    ``i`` scanned as ``V, 1, 2``.
    """
    subsets, sizes, logq = _as_log_arrays(pvals, thresholds.statistic)
    if not subsets:
        return Decision(False)
    logt = np.column_stack(thresholds.log_thresholds(sizes))
    hit = logq <= logt
    flat = np.flatnonzero(hit.ravel())
    if flat.size == 0:
        return Decision(False)
    row, col = divmod(int(flat[0]), 3)
    return Decision(True, subsets[row], STATISTIC_NAMES[col])


def most_extreme(
    pvals: SubsetScores | Mapping[Subset, PValueTriple], thresholds: CalibrationThresholds
) -> tuple[Subset, str] | None:
    """Rejecting pair minimizing ``log q - log threshold``; ``None`` if nothing rejects."""
    subsets, sizes, logq = _as_log_arrays(pvals, thresholds.statistic)
    if not subsets:
        return None
    logt = np.column_stack(thresholds.log_thresholds(sizes))
    hit = logq <= logt
    if not np.any(hit):
        return None
    with np.errstate(invalid="ignore"):
        margin = np.where(hit, np.nan_to_num(logq - logt, nan=-np.inf), np.inf)
    row, col = divmod(int(np.argmin(margin.ravel())), 3)
    return subsets[row], STATISTIC_NAMES[col]
