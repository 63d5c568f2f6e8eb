import os

import numpy as np
import pytest

from brdr._alloc import tune_allocator


def pytest_configure(config):
    tune_allocator()


@pytest.fixture(scope="session", autouse=True)
def _reference_cache(tmp_path_factory):
    # keep oracle reference files out of the user's home during tests
    if "BRDR_CACHE_DIR" not in os.environ:
        os.environ["BRDR_CACHE_DIR"] = str(tmp_path_factory.mktemp("brdr_cache"))
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


_REPORT = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Collects one verdict line per acceptance criterion."""
    return request.config.stash.setdefault(_REPORT, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
