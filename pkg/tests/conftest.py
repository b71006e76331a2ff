import numpy as np
import pytest

from mnrank.dataset import bundled, load_catalog

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None or (rep.when != "call" and rep.passed):
        return
    n, text = m.args
    prev = _CRITERIA.get(n, (True, text))[0]
    _CRITERIA[n] = (prev and rep.passed, text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, text = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {text}")


@pytest.fixture(scope="session")
def sample_catalog():
    return load_catalog(bundled("curves_sample.csv"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
