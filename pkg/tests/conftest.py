import re

import numpy as np
import pytest

from qrfdensity.dataset import Dataset
from qrfdensity.forest import ForestConfig, fit

_acceptance = {}


def make_dataset(X, y, names=None):
    X = np.asarray(X, dtype=float)
    names = names or tuple(f"x{j + 1}" for j in range(X.shape[1]))
    return Dataset(X, np.asarray(y, dtype=float), names, np.arange(len(y)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_forest():
    """n=200, two informative features and one noise feature, 50 trees."""
    r = np.random.default_rng(7)
    X = r.uniform(size=(200, 3))
    y = 3 * X[:, 0] - 2 * X[:, 1] + r.normal(0, 0.2, 200)
    return fit(make_dataset(X, y), ForestConfig(ntree=50, seed=99))


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or report.outcome != "passed":
        prev = _acceptance.get(key, "PASS")
        _acceptance[key] = "PASS" if (prev == "PASS" and report.outcome == "passed") else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), status in sorted(_acceptance.items()):
        terminalreporter.write_line(f"criterion {num:>2} {name:<45} {status}")
