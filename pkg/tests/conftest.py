import numpy as np
import pytest

from timbreboost.synth import make_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Eight classes, a handful of short clips each."""
    return make_corpus(tmp_path_factory.mktemp("small_corpus"), clips_per_class=6,
                       duration_s=0.3, seed=7)


_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "status": "PASS"})
    if call.excinfo is not None:
        skipped = call.excinfo.errisinstance(pytest.skip.Exception)
        if skipped and entry["status"] == "PASS":
            entry["status"] = "SKIP"
        elif not skipped:
            entry["status"] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        terminalreporter.write_line(f"[{e['status']}] criterion {number}: {e['title']}")
