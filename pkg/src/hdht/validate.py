"""Fast self-checks of the numerical invariants, used by ``hdht validate``.

Each check draws small random problems from a fixed seed and compares a
production code path with an independent computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats as sps

from hdht import stats
from hdht.collection import build_reparam, lars_path
from hdht.data import TwoSampleData

FAULTS = ("statistic", "path", "bound")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_data(rng: np.random.Generator, n1: int, n2: int, p: int) -> TwoSampleData:
    x1 = rng.standard_normal((n1, p))
    x2 = rng.standard_normal((n2, p)) * rng.uniform(0.5, 2.0, p)
    b = rng.standard_normal(p) * (rng.random(p) < 0.3)
    y1 = x1 @ b + rng.standard_normal(n1)
    y2 = x2 @ (b + 0.5 * rng.standard_normal(p)) + rng.uniform(0.5, 2.0) * rng.standard_normal(n2)
    return TwoSampleData(x1, y1, x2, y2)


def symmetric_likelihood_ratio(data: TwoSampleData, s) -> float:
    """``2 (D1 + D2)`` from Gaussian log-likelihoods evaluated directly.

    ``Di`` is the per-observation log-likelihood gap, in sample ``i``,
    between the sample's own maximum-likelihood fit and the fit of the
    other sample.
    """
    cols = list(s)
    fits = []
    for x, y in ((data.x1, data.y1), (data.x2, data.y2)):
        beta = np.linalg.lstsq(x[:, cols], y, rcond=None)[0]
        sd = np.sqrt(np.mean((y - x[:, cols] @ beta) ** 2))
        fits.append((beta, sd))
    total = 0.0
    for i, (x, y) in enumerate(((data.x1, data.y1), (data.x2, data.y2))):
        own, other = fits[i], fits[1 - i]
        ll_own = sps.norm.logpdf(y, x[:, cols] @ own[0], own[1]).sum()
        ll_other = sps.norm.logpdf(y, x[:, cols] @ other[0], other[1]).sum()
        total += (ll_own - ll_other) / len(y)
    return 2.0 * total


def check_decomposition(rng: np.random.Generator, fault: str | None = None) -> CheckResult:
    worst = 0.0
    for _ in range(200):
        n1, n2 = rng.integers(10, 61, size=2)
        p = int(rng.integers(5, 12))
        data = _random_data(rng, int(n1), int(n2), p)
        k = int(rng.integers(1, 6))
        s = tuple(sorted(rng.choice(p, k, replace=False)))
        t = stats.compute_statistics(data, s)
        total = t.f_v + t.f_1 + t.f_2
        if fault == "statistic":
            total *= 1.001
        ref = symmetric_likelihood_ratio(data, s)
        worst = max(worst, abs(total - ref) / max(abs(ref), 1e-300))
    return CheckResult("decomposition identity", bool(worst < 1e-8), f"max relative gap {worst:.2e}")


def check_kkt(rng: np.random.Generator, fault: str | None = None) -> CheckResult:
    worst = 0.0
    for _ in range(20):
        data = _random_data(rng, 20, 20, 20)
        design = build_reparam(data)
        path = lars_path(design)
        lams = path.lambdas
        for k in range(len(lams) - 1):
            lam = 0.5 * (lams[k] + lams[k + 1])
            theta = path.coef_at(lam)
            if fault == "path":
                theta = theta * 1.01
            grad = 2.0 * design.w.T @ (design.y - design.w @ theta)
            on = theta != 0
            viol = np.abs(grad[on] - lam * np.sign(theta[on])).max(initial=0.0)
            viol = max(viol, np.abs(grad[~on]).max(initial=0.0) - lam)
            worst = max(worst, viol / lams[0])
    return CheckResult("lasso path optimality", bool(worst < 1e-8), f"max scaled KKT violation {worst:.2e}")


def check_bound(rng: np.random.Generator, fault: str | None = None) -> CheckResult:
    failures = 0
    points = 0
    draws = 40_000
    for _ in range(4):
        k = int(rng.integers(1, 5))
        dof = int(rng.integers(8, 40))
        a = rng.uniform(0.02, 0.3, k)
        z = rng.standard_normal((draws, k))
        w = rng.chisquare(dof, draws)
        t = (z * z) @ a / (w / dof)
        for u in np.quantile(t, [0.5, 0.9, 0.99]):
            bound = stats.laplace_tail_bound(float(u), stats.EigenSpectrum(a), dof + k, k)
            tail = float(np.mean(t >= u))
            if fault == "bound":
                bound = 0.5 * tail
            se = np.sqrt(tail * (1 - tail) / draws)
            points += 1
            failures += bound < tail - 3 * se
    return CheckResult("tail bound domination", bool(failures == 0), f"{failures}/{points} points violated")


def check_variance_pvalue(rng: np.random.Generator, fault: str | None = None) -> CheckResult:
    worst = 0.0
    for _ in range(50):
        data = _random_data(rng, int(rng.integers(10, 40)), int(rng.integers(10, 40)), 6)
        s = (0, 1)
        _, q = stats.subset_pvalues(data, s)
        _, q_swap = stats.subset_pvalues(data.swapped(), s)
        worst = max(worst, abs(q.q_v - q_swap.q_v))
        if not 0.0 <= q.q_v <= 1.0:
            worst = np.inf
    return CheckResult("variance p-value symmetry", bool(worst < 1e-10), f"max asymmetry {worst:.2e}")


CHECKS: tuple[Callable[..., CheckResult], ...] = (
    check_decomposition,
    check_kkt,
    check_bound,
    check_variance_pvalue,
)


def run_checks(seed: int = 0, fault: str | None = None) -> list[CheckResult]:
    """Run every check; ``fault`` deliberately corrupts one of them (harness hook)."""
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    return [check(np.random.default_rng([seed, j]), fault) for j, check in enumerate(CHECKS)]
