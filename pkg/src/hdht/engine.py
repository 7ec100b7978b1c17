"""End-to-end two-sample test: collection, p-values, calibration, decision.

:func:`run_test` is the entry point.  With permutation calibration the same
draws that fix the thresholds also give empirical p-values and the rejected
model used for interpretation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from hdht import calibrate as cal
from hdht import numkit
from hdht.collection import (
    LASSO,
    S1,
    SLEQK,
    CollectionBuilder,
    ModelCollection,
    default_d_max,
)
from hdht.data import Subset, TwoSampleData
from hdht.errors import RankDeficient, SubsetTooLarge, TooFewObservations
from hdht.stats import PValueTriple, StatTriple, SubsetScores, check_subset, score_subsets

SCHEMA_VERSION = "1.0"
MIN_OBSERVATIONS = 4
COLLECTIONS = (S1, SLEQK, LASSO)
CALIBRATIONS = (cal.BONFERRONI, cal.PERMUTATION)
STATISTICS = (cal.CLR, cal.FISHER)


@dataclass(frozen=True)
class TestConfig:
    """Choices binding one run of the test.

    ``k`` is the maximal subset size of the ``"SleqK"`` collection; ``b`` is
    the number of permutation draws and is ignored by Bonferroni
    calibration.  ``statistic="fisher"`` swaps the three statistics for the
    single Fisher statistic (simulation baseline).
    """

    __test__ = False

    collection: str = LASSO
    calibration: str = cal.PERMUTATION
    alpha: float = 0.05
    b: int = 100
    seed: int = 0
    d_max: int | None = None
    k: int | None = None
    statistic: str = cal.CLR
    standardize: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.collection not in COLLECTIONS:
            raise ValueError(f"collection must be one of {COLLECTIONS}")
        if self.calibration not in CALIBRATIONS:
            raise ValueError(f"calibration must be one of {CALIBRATIONS}")
        if self.statistic not in STATISTICS:
            raise ValueError(f"statistic must be one of {STATISTICS}")
        if self.calibration == cal.PERMUTATION and self.b < cal.MIN_DRAWS:
            raise ValueError(f"permutation calibration needs b >= {cal.MIN_DRAWS}")
        if self.collection == SLEQK and (self.k is None or self.k < 1):
            raise ValueError("the SleqK collection needs k >= 1")
        if self.d_max is not None and self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass(frozen=True)
class TestReport:
    """Outcome of :func:`run_test`.

    Empirical p-values and rejected models are filled only under permutation
    calibration.  ``witness_subset``/``witness_statistic`` identify the
    rejecting pair with the smallest ``log q - log threshold``.
    """

    __test__ = False

    reject: bool
    config: TestConfig
    n1: int
    n2: int
    p: int
    collection: ModelCollection
    scores: SubsetScores = field(repr=False)
    thresholds: cal.CalibrationThresholds = field(repr=False)
    witness_subset: Subset | None = None
    witness_statistic: str | None = None
    first_witness: Subset | None = None
    empirical_p: float | None = None
    empirical_p_v: float | None = None
    empirical_p_12: float | None = None
    rejected_model: Subset | None = None
    rejected_model_v: Subset | None = None
    rejected_model_12: Subset | None = None
    labels: tuple[str, ...] | None = None

    @property
    def skipped(self) -> tuple[Subset, ...]:
        return tuple(s for s, ok in zip(self.scores.subsets, self.scores.valid) if not ok)

    @property
    def per_subset(self) -> list[tuple[Subset, StatTriple, PValueTriple]]:
        sc = self.scores
        rows = []
        for j, s in enumerate(sc.subsets):
            if not sc.valid[j]:
                continue
            t = StatTriple(float(sc.f_v[j]), float(sc.f_1[j]), float(sc.f_2[j]), len(s))
            q = PValueTriple(float(sc.q_v[j]), float(sc.q_1[j]), float(sc.q_2[j]))
            rows.append((s, t, q))
        return rows

    def to_dict(self) -> dict[str, Any]:
        return report_to_dict(self)


# -- interpretation -----------------------------------------------------------


def _observed_minima(observed, p: int, statistic: str) -> tuple[float, float]:
    if isinstance(observed, SubsetScores):
        return cal.weighted_minima(observed, p, statistic)
    lv, l1 = _weighted_logs(observed, p)
    return float(np.min(lv)), float(np.min(l1))


def _weighted_logs(observed: Mapping[Subset, PValueTriple], p: int):
    subsets = list(observed)
    lc = numkit.log_binom(p, np.array([len(s) for s in subsets]))
    qv = np.array([observed[s].q_v for s in subsets], dtype=float)
    q12 = np.array([min(observed[s].q_1, observed[s].q_2) for s in subsets], dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(qv) + lc, np.log(q12) + lc


def empirical_pvalues(
    observed: SubsetScores | Mapping[Subset, PValueTriple],
    draws: Sequence[cal.PermutationDraw],
    p: int,
    statistic: str = cal.CLR,
) -> tuple[float, float | None, float]:
    """``(p_v, p_12, p_global)``: fractions of draws with a strictly smaller weighted minimum.

    ``p_global = min(1, 2 min(p_v, p_12))``.  For the Fisher family there is
    a single part, ``p_12`` is ``None`` and ``p_global = p_v``.
    """
    if not draws:
        raise ValueError("at least one permutation draw is needed")
    obs_v, obs_12 = _observed_minima(observed, p, statistic)
    cv = np.array([d.log_c_v for d in draws])
    p_v = float(np.mean(cv < obs_v))
    if statistic == cal.FISHER:
        return p_v, None, p_v
    c1 = np.array([d.log_c_1 for d in draws])
    p_12 = float(np.mean(c1 < obs_12))
    return p_v, p_12, min(1.0, 2.0 * min(p_v, p_12))


def _tie_key(s: Subset) -> tuple[int, Subset]:
    return (len(s), s)


def _argmin_subset(subsets: Sequence[Subset], values: np.ndarray) -> Subset:
    best = np.min(values)
    candidates = [s for s, v in zip(subsets, values) if v == best]
    return min(candidates, key=_tie_key)


def rejected_models(
    observed: SubsetScores | Mapping[Subset, PValueTriple],
    p: int,
    p_v: float | None = None,
    p_12: float | None = None,
    statistic: str = cal.CLR,
    margins: tuple[float, float] | None = None,
) -> tuple[Subset, Subset | None, Subset]:
    """Argmins ``(S_V, S_12, S_R)`` of the weighted p-values ``q C(p, |S|)``.

    ``S_R`` comes from the part with the smaller empirical p-value.  When
    the two empirical p-values are equal and ``margins`` is given (observed
    log weighted minimum minus the log calibrated constant, per part), the
    part with the smaller margin wins.  Remaining ties, both inside an
    argmin and between the parts, go to the smaller subset and then to the
    lexicographically smaller one.
    """
    if isinstance(observed, SubsetScores):
        ok = observed.valid
        subsets = [s for s, v in zip(observed.subsets, ok) if v]
        lc = numkit.log_binom(p, observed.sizes[ok])
        with np.errstate(divide="ignore"):
            if statistic == cal.FISHER:
                lv = np.log(observed.q_fisher[ok]) + lc
                l12 = None
            else:
                lv = np.log(observed.q_v[ok]) + lc
                l12 = np.log(np.minimum(observed.q_1[ok], observed.q_2[ok])) + lc
    else:
        subsets = list(observed)
        lv, l12 = _weighted_logs(observed, p)
    if not subsets:
        raise ValueError("no evaluable subset")
    s_v = _argmin_subset(subsets, lv)
    if l12 is None:
        return s_v, None, s_v
    s_12 = _argmin_subset(subsets, l12)
    if p_v is not None and p_12 is not None and p_v != p_12:
        s_r = s_v if p_v < p_12 else s_12
    elif margins is not None and margins[0] != margins[1]:
        s_r = s_v if margins[0] < margins[1] else s_12
    else:
        s_r = min((s_v, s_12), key=_tie_key)
    return s_v, s_12, s_r


# -- Fisher baseline ----------------------------------------------------------


def fisher_statistic(data: TwoSampleData, s: Subset) -> tuple[float, float]:
    """Classical F statistic for equal coefficients on ``s`` and its exact p-value.

    Raises
    ------
    RankDeficient
        If a per-sample or pooled restricted design is rank deficient.
    """
    s = tuple(s)
    n = data.n1 + data.n2
    k = len(s)
    if k < 1 or 2 * k >= n:
        raise SubsetTooLarge(f"need 1 <= |S| and 2|S| < n1 + n2, got |S|={k}")
    cols = list(s)
    rss1 = numkit.least_squares(data.x1[:, cols], data.y1).residual_sum_squares
    rss2 = numkit.least_squares(data.x2[:, cols], data.y2).residual_sum_squares
    pooled = numkit.least_squares(
        np.vstack([data.x1, data.x2])[:, cols], np.concatenate([data.y1, data.y2])
    ).residual_sum_squares
    within = rss1 + rss2
    if within <= 0:
        raise RankDeficient("both samples are fitted exactly")
    value = max(pooled - within, 0.0) / within * (n - 2 * k) / k
    return value, float(numkit.fisher_sf(k, n - 2 * k, value))


# -- orchestration ------------------------------------------------------------


def make_builder(config: TestConfig, data: TwoSampleData) -> CollectionBuilder:
    d_max = config.d_max if config.d_max is not None else default_d_max(data)
    return CollectionBuilder(config.collection, config.k, d_max, config.standardize)


def ambient_size(config: TestConfig, builder: CollectionBuilder) -> int:
    if config.collection == S1:
        return 1
    if config.collection == SLEQK:
        return int(config.k)
    return int(builder.d_max)


def _check_inputs(data: TwoSampleData, config: TestConfig) -> None:
    if min(data.n1, data.n2) < MIN_OBSERVATIONS:
        raise TooFewObservations(
            f"each sample needs at least {MIN_OBSERVATIONS} rows, got {data.n1} and {data.n2}"
        )
    if data.p < 1:
        raise TooFewObservations("at least one covariate is needed")
    half = min(data.n1, data.n2) // 2
    if config.collection == SLEQK and config.k > half:
        raise SubsetTooLarge(f"k={config.k} exceeds min(n1, n2) / 2 = {half}")
    if config.d_max is not None and config.d_max > half:
        raise SubsetTooLarge(f"d_max={config.d_max} exceeds min(n1, n2) / 2 = {half}")


def run_test(
    data: TwoSampleData, config: TestConfig | None = None, threads: int | None = None
) -> TestReport:
    """Run the adaptive two-sample test on ``data``.

    Parameters
    ----------
    data
        The two samples.
    config
        Collection, calibration and level; defaults to the Lasso collection
        with 100 permutation draws at level 0.05.
    threads
        Worker processes for the permutation draws.  Results do not depend
        on it.
    """
    config = config or TestConfig()
    _check_inputs(data, config)
    builder = make_builder(config, data)
    collection = builder(data)
    for s in collection:
        check_subset(data, s)
    fisher = config.statistic == cal.FISHER
    scores = score_subsets(data, collection.subsets, fisher=fisher)

    if config.calibration == cal.BONFERRONI:
        thresholds = cal.bonferroni_thresholds(
            collection, ambient_size(config, builder), data.p, config.alpha, config.statistic
        )
    else:
        thresholds = cal.permutation_calibrate(
            data, builder, config.b, config.alpha, config.seed, config.statistic, threads
        )
    decision = cal.decide(scores, thresholds)
    extreme = cal.most_extreme(scores, thresholds) if decision.reject else None
    rename = {"V": "F"} if fisher else {}

    fields: dict[str, Any] = {}
    if extreme is not None:
        fields["witness_subset"] = extreme[0]
        fields["witness_statistic"] = rename.get(extreme[1], extreme[1])
        fields["first_witness"] = decision.witness_subset
    if config.calibration == cal.PERMUTATION and np.any(scores.valid):
        p_v, p_12, p_all = empirical_pvalues(scores, thresholds.draws, data.p, config.statistic)
        obs_v, obs_12 = cal.weighted_minima(scores, data.p, config.statistic)
        margins = (obs_v - thresholds.log_c_v, obs_12 - thresholds.log_c_1)
        s_v, s_12, s_r = rejected_models(scores, data.p, p_v, p_12, config.statistic, margins)
        fields.update(
            empirical_p=p_all,
            empirical_p_v=p_v,
            empirical_p_12=p_12,
            rejected_model=s_r,
            rejected_model_v=s_v,
            rejected_model_12=s_12,
        )
    elif decision.reject:
        fields["rejected_model"] = fields["witness_subset"]

    return TestReport(
        reject=decision.reject,
        config=config,
        n1=data.n1,
        n2=data.n2,
        p=data.p,
        collection=collection,
        scores=scores,
        thresholds=thresholds,
        labels=data.labels,
        **fields,
    )


# -- serialization ------------------------------------------------------------


def json_number(x) -> float | str | None:
    """JSON-safe float: ``None`` for NaN and strings for infinities."""
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _subset_json(s: Subset | None, labels) -> Any:
    if s is None:
        return None
    out: dict[str, Any] = {"indices": list(s)}
    if labels is not None:
        out["labels"] = [labels[i] for i in s]
    return out


def thresholds_to_dict(th: cal.CalibrationThresholds) -> dict[str, Any]:
    out: dict[str, Any] = {
        "scheme": th.scheme,
        "alpha": th.alpha,
        "statistic": th.statistic,
        "d_max": th.d_max,
    }
    if th.scheme == cal.PERMUTATION:
        out["log_c_v"] = json_number(th.log_c_v)
        out["log_c_1"] = json_number(th.log_c_1)
        out["draws"] = len(th.draws)
        out["draw_minima"] = [[json_number(d.log_c_v), json_number(d.log_c_1)] for d in th.draws]
    return out


def report_to_dict(r: TestReport) -> dict[str, Any]:
    """Plain JSON tree of a :class:`TestReport`; subset indices are 0-based."""
    sc = r.scores
    lv, l1, l2 = (
        r.thresholds.log_thresholds(sc.sizes) if len(sc) else (np.zeros(0),) * 3
    )
    table = []
    for j, s in enumerate(sc.subsets):
        row: dict[str, Any] = {
            "subset": list(s),
            "valid": bool(sc.valid[j]),
            "f_v": json_number(sc.f_v[j]),
            "f_1": json_number(sc.f_1[j]),
            "f_2": json_number(sc.f_2[j]),
            "q_v": json_number(sc.q_v[j]),
            "q_1": json_number(sc.q_1[j]),
            "q_2": json_number(sc.q_2[j]),
            "log_threshold_v": json_number(lv[j]),
            "log_threshold_1": json_number(l1[j]),
            "log_threshold_2": json_number(l2[j]),
        }
        if sc.fisher is not None:
            row["fisher"] = json_number(sc.fisher[j])
            row["q_fisher"] = json_number(sc.q_fisher[j])
        table.append(row)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "two_sample_test",
        "reject": bool(r.reject),
        "config": asdict(r.config),
        "dimensions": {"n1": r.n1, "n2": r.n2, "p": r.p},
        "collection": {
            "origin": r.collection.origin,
            "d_max": r.collection.d_max,
            "size": len(r.collection),
        },
        "thresholds": thresholds_to_dict(r.thresholds),
        "witness": {
            "subset": _subset_json(r.witness_subset, r.labels),
            "statistic": r.witness_statistic,
            "first_in_collection_order": _subset_json(r.first_witness, r.labels),
        },
        "empirical_p": json_number(r.empirical_p),
        "empirical_p_v": json_number(r.empirical_p_v),
        "empirical_p_12": json_number(r.empirical_p_12),
        "rejected_model": _subset_json(r.rejected_model, r.labels),
        "rejected_model_v": _subset_json(r.rejected_model_v, r.labels),
        "rejected_model_12": _subset_json(r.rejected_model_12, r.labels),
        "skipped": [list(s) for s in r.skipped],
        "subsets": table,
    }
