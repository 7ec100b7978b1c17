import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from hdht.data import TwoSampleData

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance: dict[str, tuple[str, str]] = {}


def random_data(rng, n1=30, n2=30, p=8, shift=0.0, noise2=1.0):
    x1 = rng.standard_normal((n1, p))
    x2 = rng.standard_normal((n2, p))
    beta = rng.standard_normal(p) * (rng.random(p) < 0.5)
    y1 = x1 @ beta + rng.standard_normal(n1)
    y2 = x2 @ (beta + shift) + noise2 * rng.standard_normal(n2)
    return TwoSampleData(x1, y1, x2, y2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "FAIL"
        detail = getattr(item, "acceptance_detail", "")
        _acceptance[label] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_acceptance, key=lambda s: int(s.split()[0])):
        status, detail = _acceptance[label]
        terminalreporter.write_line(f"criterion {label}: {status}  {detail}".rstrip())
