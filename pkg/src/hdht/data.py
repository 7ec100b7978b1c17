"""Containers for the two regression samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hdht.errors import DimensionMismatch

Subset = tuple[int, ...]


def as_subset(indices) -> Subset:
    """Normalize an iterable of 0-based covariate indices into a sorted tuple."""
    out = tuple(sorted({int(i) for i in indices}))
    if out and out[0] < 0:
        raise ValueError("covariate indices must be nonnegative")
    return out


@dataclass(frozen=True, eq=False)
class TwoSampleData:
    """Two design/response pairs sharing the same ``p`` covariates.

    Arrays are copied to C-contiguous float64 and made read-only.  ``labels``
    optionally names the covariates (used in reports).
    """

    x1: np.ndarray
    y1: np.ndarray
    x2: np.ndarray
    y2: np.ndarray
    labels: Sequence[str] | None = field(default=None)

    def __post_init__(self):
        arrays = {}
        for name in ("x1", "y1", "x2", "y2"):
            a = np.array(getattr(self, name), dtype=float, order="C")
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        x1, y1, x2, y2 = arrays["x1"], arrays["y1"], arrays["x2"], arrays["y2"]
        if x1.ndim != 2 or x2.ndim != 2:
            raise DimensionMismatch("designs must be 2-dimensional")
        if y1.ndim != 1 or y2.ndim != 1:
            raise DimensionMismatch("responses must be 1-dimensional")
        if x1.shape[1] != x2.shape[1]:
            raise DimensionMismatch(
                f"sample 1 has {x1.shape[1]} covariates, sample 2 has {x2.shape[1]}"
            )
        if x1.shape[0] != y1.shape[0]:
            raise DimensionMismatch(f"x1 has {x1.shape[0]} rows but y1 has {y1.shape[0]}")
        if x2.shape[0] != y2.shape[0]:
            raise DimensionMismatch(f"x2 has {x2.shape[0]} rows but y2 has {y2.shape[0]}")
        for name, a in arrays.items():
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite values")
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != x1.shape[1]:
                raise DimensionMismatch("labels must name every covariate")
            object.__setattr__(self, "labels", labels)

    @property
    def n1(self) -> int:
        return self.x1.shape[0]

    @property
    def n2(self) -> int:
        return self.x2.shape[0]

    @property
    def p(self) -> int:
        return self.x1.shape[1]

    def swapped(self) -> "TwoSampleData":
        return TwoSampleData(self.x2, self.y2, self.x1, self.y1, self.labels)

    def permuted(self, perm: np.ndarray) -> "TwoSampleData":
        """Pool the rows, reorder them by ``perm`` and split at ``n1`` again."""
        x = np.vstack([self.x1, self.x2])[perm]
        y = np.concatenate([self.y1, self.y2])[perm]
        n1 = self.n1
        return TwoSampleData(x[:n1], y[:n1], x[n1:], y[n1:], self.labels)

    def select_columns(self, cols: Sequence[int]) -> "TwoSampleData":
        cols = list(cols)
        labels = None if self.labels is None else [self.labels[c] for c in cols]
        return TwoSampleData(self.x1[:, cols], self.y1, self.x2[:, cols], self.y2, labels)
