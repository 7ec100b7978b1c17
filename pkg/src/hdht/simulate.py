"""Synthetic benchmarks: rare-and-weak coefficient patterns, design covariances, power studies.

Every replication owns an independent random stream keyed on
``(seed, cell, rep)``, so results do not depend on the order or the number
of worker processes.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Iterable, Sequence

import numpy as np

from hdht import _parallel
from hdht import calibrate as cal
from hdht.collection import LASSO, S1, SLEQK
from hdht.data import TwoSampleData
from hdht.engine import TestConfig, run_test
from hdht.ggm import GgmSamples
from hdht.errors import NotPositiveDefinite

# scenario -> (eta, eta2); None means "no such block"
SCENARIOS: dict[str, tuple[float | None, float | None]] = {
    "H00": (None, None),
    "H0": (5 / 8, None),
    "1": (None, 5 / 8),
    "2": (7 / 8, 5 / 8),
    "3": (5 / 8, 5 / 8),
    "4": (5 / 8, 7 / 8),
}

IDENTITY = "identity"
POWER_DECAY = "power-decay"
CLUSTERED_GGM = "clustered-ggm"

CSV_COLUMNS = (
    "scenario",
    "covariance",
    "n",
    "p",
    "r",
    "method",
    "reps",
    "reject_rate",
    "ci_half_width",
    "mean_runtime_ms",
)

_STREAM_COVARIANCE = 1
_STREAM_DATA = 2
_STREAM_TEST = 3


# -- coefficients ---------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    eta: float | None
    eta2: float | None
    r: float
    n: int
    p: int

    @property
    def n_common(self) -> int:
        return sparsity_count(self.p, self.eta)

    @property
    def n_specific(self) -> int:
        return sparsity_count(self.p, self.eta2)

    @property
    def magnitude(self) -> float:
        return signal_magnitude(self.r, self.p)


def sparsity_count(p: int, eta: float | None) -> int:
    """``floor(p^(1 - eta))``, or 0 when the block is absent."""
    if eta is None:
        return 0
    # the tiny offset keeps exact powers (e.g. 2^3) from rounding down
    return int(math.floor(p ** (1.0 - eta) * (1 + 1e-12)))


def signal_magnitude(r: float, p: int) -> float:
    """``mu_r = sqrt(2 r log p)``."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    return math.sqrt(2.0 * r * math.log(p))


def scenario(name: str, n: int, p: int, r: float) -> Scenario:
    key = str(name)
    if key not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    eta, eta2 = SCENARIOS[key]
    return Scenario(key, eta, eta2, float(r), int(n), int(p))


def make_scenario(name: str, n: int, p: int, r: float) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient vectors ``(beta1, beta2)`` of a scenario.

    ``beta1`` holds the common block on the first coordinates; ``beta2``
    repeats it and appends the sample-2-specific block right after.  All
    nonzero entries equal ``sqrt(2 r log p)``.
    """
    sc = scenario(name, n, p, r)
    k0, k2 = sc.n_common, sc.n_specific
    if k0 + k2 > p:
        raise ValueError(f"scenario {name} needs {k0 + k2} coefficients but p={p}")
    mu = sc.magnitude
    b1 = np.zeros(p)
    b2 = np.zeros(p)
    b1[:k0] = mu
    b2[: k0 + k2] = mu
    return b1, b2


# -- covariances ----------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceSpec:
    """Design covariance family.

    ``power-decay`` uses ``rho^|i-j|``, optionally under a random symmetric
    permutation.  ``clustered-ggm`` draws a sparse precision matrix with
    ``clusters`` equal blocks, Erdős–Rényi edges at rate ``intra`` inside
    blocks and ``extra`` (default ``intra / 5``) across, positive random
    partial correlations on the edges and diagonal ``(1 + slack)`` times the
    absolute off-diagonal row sum.  It is then inverted and scaled to unit
    variances.  The default ``slack`` gives about ten partners with
    ``|corr| > 0.2`` per covariate at ``p = 200``.
    """

    kind: str = IDENTITY
    rho: float = 0.75
    permute: bool = True
    intra: float = 0.05
    extra: float | None = None
    clusters: int = 3
    slack: float = 0.025

    def __post_init__(self):
        if self.kind not in (IDENTITY, POWER_DECAY, CLUSTERED_GGM):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        for name in ("intra", "extra"):
            v = getattr(self, name)
            if v is not None and not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if self.slack <= 0:
            raise ValueError("slack must be positive")

    @property
    def label(self) -> str:
        if self.kind == POWER_DECAY:
            return f"{POWER_DECAY}({self.rho:g})"
        if self.kind == CLUSTERED_GGM:
            return f"{CLUSTERED_GGM}({self.intra:g})"
        return IDENTITY


def _generator(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def power_decay(p: int, rho: float) -> np.ndarray:
    i = np.arange(p)
    return rho ** np.abs(i[:, None] - i[None, :]).astype(float)


def clustered_precision(p: int, spec: CovarianceSpec, rng: np.random.Generator) -> np.ndarray:
    extra = spec.intra / 5.0 if spec.extra is None else spec.extra
    block = np.arange(p) * spec.clusters // p
    rate = np.where(block[:, None] == block[None, :], spec.intra, extra)
    edges = np.triu(rng.random((p, p)) < rate, 1)
    weight = np.where(edges, rng.uniform(0.5, 1.0, (p, p)), 0.0)
    weight = weight + weight.T
    rowsum = weight.sum(axis=1)
    omega = -weight
    omega[np.diag_indices(p)] = np.where(rowsum > 0, (1.0 + spec.slack) * rowsum, 1.0)
    return omega


def make_covariance(spec: CovarianceSpec, p: int, seed: int | Sequence[int] = 0) -> np.ndarray:
    """Symmetric positive definite ``p x p`` design covariance.

    Raises
    ------
    NotPositiveDefinite
        If a clustered draw stays indefinite after six rounds of halving its
        off-diagonal part.
    """
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    rng = _generator(*key, _STREAM_COVARIANCE)
    if spec.kind == IDENTITY:
        return np.eye(p)
    if spec.kind == POWER_DECAY:
        sigma = power_decay(p, spec.rho)
        if spec.permute:
            perm = rng.permutation(p)
            sigma = sigma[np.ix_(perm, perm)]
        return sigma
    omega = clustered_precision(p, spec, rng)
    diag = np.diag(np.diag(omega))
    for _ in range(6):
        try:
            np.linalg.cholesky(omega)
            sigma = np.linalg.inv(omega)
            sigma = 0.5 * (sigma + sigma.T)
            sd = np.sqrt(np.diag(sigma))
            sigma = sigma / np.outer(sd, sd)
            np.linalg.cholesky(sigma)
            return sigma
        except np.linalg.LinAlgError:
            omega = diag + 0.5 * (omega - diag)
    raise NotPositiveDefinite("clustered precision matrix is not positive definite")


# -- data -----------------------------------------------------------------------


def draw_two_sample(
    beta1: np.ndarray,
    beta2: np.ndarray,
    sigma: np.ndarray,
    n1: int,
    n2: int,
    sigma1: float = 1.0,
    sigma2: float = 1.0,
    seed: int | Sequence[int] = 0,
    sigma_2: np.ndarray | None = None,
) -> TwoSampleData:
    """Gaussian designs with covariance ``sigma`` (``sigma_2`` for sample 2 if given) and linear responses.

    Design rows are ``L z`` with ``L`` the Cholesky factor; noise is standard
    Gaussian scaled by ``sigma1``/``sigma2``.
    """
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    rng = _generator(*key, _STREAM_DATA)
    beta1 = np.asarray(beta1, dtype=float)
    beta2 = np.asarray(beta2, dtype=float)
    p = beta1.shape[0]
    try:
        l1 = np.linalg.cholesky(sigma)
        l2 = l1 if sigma_2 is None else np.linalg.cholesky(sigma_2)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    x1 = rng.standard_normal((n1, p)) @ l1.T
    x2 = rng.standard_normal((n2, p)) @ l2.T
    y1 = x1 @ beta1 + sigma1 * rng.standard_normal(n1)
    y2 = x2 @ beta2 + sigma2 * rng.standard_normal(n2)
    return TwoSampleData(x1, y1, x2, y2)


def draw_gaussian(cov: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` centered Gaussian rows with covariance ``cov``."""
    return rng.standard_normal((n, cov.shape[0])) @ np.linalg.cholesky(cov).T


def draw_ggm_samples(
    omega1: np.ndarray, omega2: np.ndarray, n1: int, n2: int, seed: int | Sequence[int] = 0
) -> GgmSamples:
    """Independent Gaussian samples with precision matrices ``omega1`` and ``omega2``."""
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    rng = _generator(*key, _STREAM_DATA)
    z1 = draw_gaussian(np.linalg.inv(omega1), n1, rng)
    z2 = draw_gaussian(np.linalg.inv(omega2), n2, rng)
    return GgmSamples(z1, z2)


def kullback_semidistance(
    beta1: np.ndarray,
    sigma1: float,
    beta2: np.ndarray,
    sigma2: float,
    cov1: np.ndarray,
    cov2: np.ndarray,
) -> float:
    """Symmetrized Kullback discrepancy ``K1 + K2`` of the two conditional laws.

    ``2 (K1 + K2) = (s1/s2)^2 + (s2/s1)^2 - 2 + |d|^2_{cov2} / s1^2 + |d|^2_{cov1} / s2^2``
    with ``d = beta2 - beta1``.
    """
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("noise levels must be positive")
    d = np.asarray(beta2, dtype=float) - np.asarray(beta1, dtype=float)
    ratio = (sigma1 / sigma2) ** 2
    val = ratio + 1.0 / ratio - 2.0
    val += float(d @ np.asarray(cov2) @ d) / sigma1**2 + float(d @ np.asarray(cov1) @ d) / sigma2**2
    return max(0.5 * val, 0.0)


# -- experiments ----------------------------------------------------------------

_COLLECTION_NAMES = {"lasso": LASSO, "s1": S1}


def method_config(method: str, alpha: float, b: int, seed: int = 0) -> TestConfig:
    """Parse a method name into a :class:`TestConfig`.

    Names are ``[fisher-]{perm,bonf}-{lasso,s1,sleqK}``, e.g. ``perm-lasso``,
    ``bonf-s1``, ``fisher-perm-lasso`` or ``perm-sleq2``.
    """
    parts = method.lower().split("-")
    statistic = cal.CLR
    if parts and parts[0] == "fisher":
        statistic = cal.FISHER
        parts = parts[1:]
    if len(parts) != 2:
        raise ValueError(f"cannot parse method {method!r}")
    calib = {"perm": cal.PERMUTATION, "bonf": cal.BONFERRONI}.get(parts[0])
    if calib is None:
        raise ValueError(f"unknown calibration in method {method!r}")
    coll, k = _COLLECTION_NAMES.get(parts[1]), None
    if coll is None and parts[1].startswith("sleq") and parts[1][4:].isdigit():
        coll, k = SLEQK, int(parts[1][4:])
    if coll is None:
        raise ValueError(f"unknown collection in method {method!r}")
    return TestConfig(
        collection=coll, calibration=calib, alpha=alpha, b=b, seed=seed, k=k, statistic=statistic
    )


@dataclass(frozen=True)
class Cell:
    scenario: str
    covariance: CovarianceSpec
    n: int
    p: int
    r: float


def grid(
    scenarios: Iterable[str],
    covariances: Iterable[CovarianceSpec],
    ns: Iterable[int],
    ps: Iterable[int],
    rs: Iterable[float],
) -> list[Cell]:
    """Cartesian product of the design choices; null scenarios ignore ``r``."""
    cells = []
    rs = list(rs)
    for sc in scenarios:
        for cov in covariances:
            for n in ns:
                for p in ps:
                    for r in ([0.0] if sc == "H00" else rs):
                        cells.append(Cell(str(sc), cov, int(n), int(p), float(r)))
    return cells


def replicate_data(cell: Cell, seed: int, cell_index: int, rep: int) -> TwoSampleData:
    b1, b2 = make_scenario(cell.scenario, cell.n, cell.p, cell.r)
    sigma = make_covariance(cell.covariance, cell.p, (seed, cell_index, rep))
    return draw_two_sample(b1, b2, sigma, cell.n, cell.n, seed=(seed, cell_index, rep))


def replicate_test_seed(seed: int, cell_index: int, rep: int) -> int:
    ss = np.random.SeedSequence([int(seed), int(cell_index), int(rep), _STREAM_TEST])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _run_replicate(
    rep: int, cell: Cell, cell_index: int, configs: tuple[TestConfig, ...], seed: int
) -> list[tuple[bool, float]]:
    data = replicate_data(cell, seed, cell_index, rep)
    test_seed = replicate_test_seed(seed, cell_index, rep)
    out = []
    for cfg in configs:
        start = time.perf_counter()
        report = run_test(data, replace(cfg, seed=test_seed))
        out.append((bool(report.reject), 1e3 * (time.perf_counter() - start)))
    return out


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    covariance: str
    n: int
    p: int
    r: float
    method: str
    reps: int
    reject_rate: float
    ci_half_width: float
    mean_runtime_ms: float | None = field(default=None)

    def as_csv(self) -> list[str]:
        rt = "" if self.mean_runtime_ms is None else f"{self.mean_runtime_ms:.3f}"
        return [
            self.scenario,
            self.covariance,
            str(self.n),
            str(self.p),
            f"{self.r:g}",
            self.method,
            str(self.reps),
            f"{self.reject_rate:.6f}",
            f"{self.ci_half_width:.6f}",
            rt,
        ]


def ci_half_width(rate: float, reps: int) -> float:
    """95% Gaussian half-width ``1.96 sqrt(f (1 - f) / reps)``."""
    return 1.96 * math.sqrt(rate * (1.0 - rate) / reps)


def run_experiment(
    cells: Sequence[Cell],
    methods: Sequence[str],
    reps: int,
    alpha: float = 0.05,
    seed: int = 0,
    b: int = 100,
    threads: int | None = None,
    timing: bool = False,
) -> list[ResultRow]:
    """Rejection frequencies of each method on each cell.

    All methods see the same replicated datasets and, within a replicate,
    the same permutation stream.  ``timing=True`` fills the runtime column,
    which makes the output nondeterministic.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    configs = tuple(method_config(m, alpha, b) for m in methods)
    rows = []
    for ci, cell in enumerate(cells):
        work = partial(_run_replicate, cell=cell, cell_index=ci, configs=configs, seed=seed)
        results = _parallel.pmap(work, range(reps), threads)
        for mi, method in enumerate(methods):
            rejects = np.array([res[mi][0] for res in results])
            ms = float(np.mean([res[mi][1] for res in results]))
            rate = float(rejects.mean())
            rows.append(
                ResultRow(
                    cell.scenario,
                    cell.covariance.label,
                    cell.n,
                    cell.p,
                    cell.r,
                    method,
                    reps,
                    rate,
                    ci_half_width(rate, reps),
                    ms if timing else None,
                )
            )
    return rows


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow(row.as_csv())
    return buf.getvalue()


def level_table(rows: Sequence[ResultRow]) -> str:
    """Levels in percent with 95% half-widths: one line per ``n``, one column per method."""
    methods = list(dict.fromkeys(r.method for r in rows))
    ns = sorted({r.n for r in rows})
    cell = {(r.n, r.method): r for r in rows}
    width = max([12] + [len(m) + 2 for m in methods])
    lines = ["n".ljust(8) + "".join(m.rjust(width) for m in methods)]
    for n in ns:
        parts = []
        for m in methods:
            r = cell.get((n, m))
            txt = "-" if r is None else f"{100 * r.reject_rate:.1f} ± {100 * r.ci_half_width:.1f}"
            parts.append(txt.rjust(width))
        lines.append(f"n={n}".ljust(8) + "".join(parts))
    return "\n".join(lines)
