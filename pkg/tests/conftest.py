import numpy as np
import pytest

from reidbench.embedio import EmbeddingSet

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    ok = call.excinfo is None
    prev = _criteria.get(number, (title, True))
    _criteria[number] = (title, prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_set(rng, n=6, dim=4, n_ids=3, n_cams=2, name="t"):
    return EmbeddingSet(
        rng.normal(size=(n, dim)).astype(np.float32),
        rng.integers(0, n_ids, n),
        rng.integers(0, n_cams, n),
        name,
    )
