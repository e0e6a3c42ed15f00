import numpy as np
import pytest

from mapnet.data import build_window_set
from mapnet.noise import NoiseParams
from mapnet.pose import PoseSequence
from mapnet.synth import synth_generate


def random_pose(n=20, fps=50.0, seed=0, scale=500.0):
    rng = np.random.default_rng(seed)
    return PoseSequence(rng.normal(0, scale, size=(n, 13, 3)), fps)


@pytest.fixture(scope="session")
def small_trials():
    return [(f"t{i}",) + synth_generate(12.0, seed=100 + i) for i in range(2)]


@pytest.fixture(scope="session")
def small_windows(small_trials):
    """2 trials x 5 variants x 10 windows: 10 groups, one per split slot."""
    noise = NoiseParams(n_variants=5, base_seed=7)
    return build_window_set(small_trials, noise, [1.0, 0.5, 0.33], split_seed=3)


# -- acceptance reporting ---------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or rep.failed or rep.skipped:
        status = "PASS" if rep.passed and rep.when == "call" else ("SKIP" if rep.skipped else "FAIL")
        if _criteria.get(n, ("PASS",))[0] == "PASS" or status == "FAIL":
            _criteria[n] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, title = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")
