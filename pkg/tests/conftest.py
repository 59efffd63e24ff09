import numpy as np
import pytest

from firesale_maxent.core import BankSheet, HoldingsMatrix, MarketParams


def random_instance(rng, n, k, cash=True, sparsity=0.3):
    """Random holdings, sheet with leverage in [2, 20] and default market."""
    x = rng.exponential(10.0, (n, k)) * (rng.random((n, k)) > sparsity)
    x[np.arange(n), rng.integers(0, k, n)] += 1.0
    asset_ids = (["cash"] if cash else []) + [f"a{j}" for j in range(k - int(cash))]
    h = HoldingsMatrix(x, asset_ids=asset_ids)
    a = x.sum(axis=1)
    sheet = BankSheet(a, a / (1.0 + rng.uniform(2, 20, n)), h.bank_ids)
    return h, sheet, MarketParams.default(asset_ids)


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


# -- acceptance reporting ------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or report.failed:
        ok = report.passed and _criteria.get(number, (title, True, 0.0))[1]
        _criteria[number] = (title, ok, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, seconds = _criteria[number]
        terminalreporter.write_line(
            f"criterion {number:2d}  {'PASS' if ok else 'FAIL'}  {title}  ({seconds:.2f} s)")
