import numpy as np
import pytest

from irca.model import WaveRegime, WavenumberGrid
from irca.simulator import DeviceLayout, make_truth, simulate_datacube


@pytest.fixture(scope="session")
def band_grid():
    return WavenumberGrid.regular(6250.0, 10000.0, 343)


@pytest.fixture(scope="session")
def toy_layout():
    """Three 16x16 subimages side by side."""
    return DeviceLayout(3, 200.0, 4000.0, focal_shape=(16, 48), subimage_shape=(16, 16))


@pytest.fixture(scope="session")
def toy_truth(toy_layout):
    return make_truth(toy_layout, [1.0, 0.2, -0.1], [0.13], [0.3, -1.0, 2.0])


@pytest.fixture(scope="session")
def toy_cube(toy_layout, band_grid, toy_truth):
    return simulate_datacube(toy_layout, band_grid, toy_truth, WaveRegime.infinite())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record the outcome of an acceptance criterion for the terminal summary."""
    store = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        store[number] = (title, bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        title, passed, detail = store[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} C{number} {title}: {detail}")
