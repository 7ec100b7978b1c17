"""Two-sample comparison of Gaussian graphical models by neighborhood regressions.

Node ``i`` of a Gaussian vector satisfies ``Z_i = sum_j beta_ij Z_j + noise``
with ``beta_ij = -Omega_ij / Omega_ii``, so two precision matrices agree iff
every node's regression on the others agrees.  Each node is tested with
:func:`hdht.engine.run_test` at level ``alpha / p`` and the global null is
rejected when some node rejects.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from hdht import calibrate as cal
from hdht.data import TwoSampleData
from hdht.engine import SCHEMA_VERSION, TestConfig, TestReport, json_number, report_to_dict, run_test
from hdht.errors import DimensionMismatch, TooFewObservations

INTERPRETATION_NOTE = (
    "Level control holds for the global decision only. Per-node decisions and "
    "flagged edges are descriptive hints about where the two graphs may differ."
)


@dataclass(frozen=True, eq=False)
class GgmSamples:
    """Observation matrices ``z1`` (n1 x p) and ``z2`` (n2 x p) over the same nodes."""

    z1: np.ndarray
    z2: np.ndarray
    labels: Sequence[str] | None = None

    def __post_init__(self):
        z1 = np.array(self.z1, dtype=float)
        z2 = np.array(self.z2, dtype=float)
        if z1.ndim != 2 or z2.ndim != 2:
            raise DimensionMismatch("observation matrices must be 2-dimensional")
        if z1.shape[1] != z2.shape[1]:
            raise DimensionMismatch(f"sample 1 has {z1.shape[1]} nodes, sample 2 has {z2.shape[1]}")
        if not (np.all(np.isfinite(z1)) and np.all(np.isfinite(z2))):
            raise ValueError("observations contain non-finite values")
        z1.setflags(write=False)
        z2.setflags(write=False)
        object.__setattr__(self, "z1", z1)
        object.__setattr__(self, "z2", z2)
        labels = self.labels
        if labels is None:
            labels = [f"node{i}" for i in range(z1.shape[1])]
        labels = tuple(str(s) for s in labels)
        if len(labels) != z1.shape[1]:
            raise DimensionMismatch("labels must name every node")
        object.__setattr__(self, "labels", labels)

    @property
    def p(self) -> int:
        return self.z1.shape[1]


def neighbor_indices(p: int, node: int) -> np.ndarray:
    """Original node indices of the design columns of ``node``'s regression."""
    if not 0 <= node < p:
        raise IndexError(f"node {node} out of range for p={p}")
    return np.array([j for j in range(p) if j != node], dtype=int)


def neighborhood_data(samples: GgmSamples, node: int) -> TwoSampleData:
    """Regression of column ``node`` on all other columns, for both samples.

    Design columns keep their original order; the returned labels are the
    node labels, and :func:`neighbor_indices` gives the index map.
    """
    if samples.p < 2:
        raise TooFewObservations("a neighborhood regression needs at least two nodes")
    others = neighbor_indices(samples.p, node)
    return TwoSampleData(
        samples.z1[:, others],
        samples.z1[:, node],
        samples.z2[:, others],
        samples.z2[:, node],
        labels=[samples.labels[j] for j in others],
    )


def node_config(config: TestConfig, p: int, node: int) -> TestConfig:
    """Configuration of the test for ``node``.

    The level is ``alpha / p`` and the seed ``seed XOR node``.  Under
    permutation calibration the number of draws is raised to at least
    ``ceil(2 p / alpha) - 1`` so that an empirical p-value of ``0`` has null
    probability about ``alpha / (2 p)`` per part.
    """
    level = config.alpha / p
    b = config.b
    if config.calibration == cal.PERMUTATION:
        b = max(b, math.ceil(2 * p / config.alpha) - 1)
    return replace(config, alpha=level, b=b, seed=config.seed ^ node)


@dataclass(frozen=True)
class NodeResult:
    node: int
    label: str
    report: TestReport = field(repr=False)
    empirical_p: float | None
    reject: bool


@dataclass(frozen=True)
class GgmReport:
    global_reject: bool
    alpha: float
    config: TestConfig
    labels: tuple[str, ...]
    per_node: tuple[NodeResult, ...]
    flagged_nodes: tuple[int, ...]
    flagged_edges: tuple[tuple[int, int], ...]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return ggm_report_to_dict(self)


def ggm_test(
    samples: GgmSamples, config: TestConfig | None = None, threads: int | None = None
) -> GgmReport:
    """Compare the graphical models of two samples node by node.

    A node rejects when its empirical p-value is at most ``alpha / p``
    (permutation calibration) or when its Bonferroni test at level
    ``alpha / p`` rejects.  Flagged edges are ``(i, j)`` for ``j`` in the
    rejected model of a rejecting node ``i``.
    """
    config = config or TestConfig()
    p = samples.p
    if p < 2:
        raise TooFewObservations("the graphical-model test needs at least two nodes")
    if min(samples.z1.shape[0], samples.z2.shape[0]) < 4:
        raise TooFewObservations("each sample needs at least 4 observations")
    level = config.alpha / p
    results = []
    edges: list[tuple[int, int]] = []
    for node in range(p):
        report = run_test(neighborhood_data(samples, node), node_config(config, p, node), threads)
        if config.calibration == cal.PERMUTATION:
            emp = report.empirical_p
            reject = emp is not None and emp <= level
        else:
            emp = None
            reject = report.reject
        results.append(NodeResult(node, samples.labels[node], report, emp, bool(reject)))
        if reject and report.rejected_model is not None:
            others = neighbor_indices(p, node)
            edges.extend((node, int(others[j])) for j in report.rejected_model)
    flagged = tuple(r.node for r in results if r.reject)
    return GgmReport(
        global_reject=bool(flagged),
        alpha=config.alpha,
        config=config,
        labels=samples.labels,
        per_node=tuple(results),
        flagged_nodes=flagged,
        flagged_edges=tuple(edges),
        metadata={"interpretation": INTERPRETATION_NOTE, "per_node_level": level},
    )


def ggm_report_to_dict(r: GgmReport) -> dict[str, Any]:
    nodes = []
    for res in r.per_node:
        sub = report_to_dict(res.report)
        nodes.append(
            {
                "node": res.node,
                "label": res.label,
                "reject": res.reject,
                "empirical_p": json_number(res.empirical_p),
                "test": sub,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "ggm_test",
        "global_reject": bool(r.global_reject),
        "alpha": r.alpha,
        "config": asdict(r.config),
        "labels": list(r.labels),
        "flagged_nodes": list(r.flagged_nodes),
        "flagged_edges": [list(e) for e in r.flagged_edges],
        "flagged_edge_labels": [[r.labels[i], r.labels[j]] for i, j in r.flagged_edges],
        "metadata": dict(r.metadata),
        "nodes": nodes,
    }
