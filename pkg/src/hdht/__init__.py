"""Adaptive two-sample homogeneity tests for high-dimensional linear regression.

The test compares two regression samples ``(X1, Y1)`` and ``(X2, Y2)`` by
running low-dimensional parametric tests on a data-driven collection of
covariate subsets read off a Lasso path, and calibrating the resulting
multiple test either by a Bonferroni schedule or by permutations.  A
neighborhood-regression extension compares two Gaussian graphical models.
"""

from hdht.data import TwoSampleData
from hdht.engine import TestConfig, TestReport, run_test
from hdht.ggm import GgmSamples, ggm_test

__all__ = [
    "GgmSamples",
    "TestConfig",
    "TestReport",
    "TwoSampleData",
    "ggm_test",
    "run_test",
]

__version__ = "0.1.0"
