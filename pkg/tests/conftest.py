import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from taskfft.grid import GridSpec
from taskfft.kernel import naive_dft_3d
from taskfft.pipeline import random_field

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MATRIX_GRIDS = [(8, 8, 8), (12, 12, 12), (16, 16, 16), (4, 8, 16)]
MATRIX_RANKS = [1, 2, 4, 8]
STRATEGIES = ["slab", "pencil"]
PRECISIONS = ["f32", "f64"]


@functools.lru_cache(maxsize=None)
def oracle_case(shape, precision, seed=0):
    """(input, naive forward spectrum) for a grid; the O(N^2) oracle runs once per grid."""
    g = GridSpec(*shape, precision=precision)
    x = random_field(g, seed)
    return x, naive_dft_3d(x)


def tol(shape, precision, x):
    eps = 1e-10 if precision == "f64" else 1e-4
    return eps * int(np.prod(shape)) * float(np.abs(x).max())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        _ACCEPTANCE[mark.args[0]] = (mark.args[1], rep.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, outcome, detail = _ACCEPTANCE[n]
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"[{verdict}] criterion {n:>2}: {title}  {detail}".rstrip())
