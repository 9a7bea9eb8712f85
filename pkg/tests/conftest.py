import pytest

from odcalib.analytical import AnalyticalParams
from odcalib.network import Network, Path, Segment, corridor_network
from odcalib.scenario import ScenarioSpec, build_scenario
from odcalib.simulator import FieldMeasurements, SimulatorConfig


def chain(n, lengths=None, lanes=2, speed=100.0):
    lengths = lengths or [1.0] * n
    return tuple(Segment(f"s{i}", lengths[i], lanes, speed, f"n{i}", f"n{i + 1}") for i in range(n))


@pytest.fixture
def params():
    return AnalyticalParams()


@pytest.fixture
def small_net():
    """Five-segment corridor with three ODs, one of them split over two paths."""
    segs = chain(5, lengths=[1.0, 0.8, 1.2, 0.6, 1.5])
    paths = (
        Path("a", "z0", ("s0", "s1", "s2"), 1.0),
        Path("b1", "z1", ("s1", "s2", "s3"), 0.7),
        Path("b2", "z1", ("s2", "s3"), 0.3),
        Path("c", "z2", ("s3", "s4"), 1.0),
    )
    return Network(segs, ("z0", "z1", "z2"), paths, ("a", "b1", "b2", "c"),
                   tuple(s.id for s in segs))


@pytest.fixture
def corridor():
    return corridor_network(12, 6, seed=3)


def fake_measurements(network, rng, times=None, counts=None):
    times = rng.uniform(1.0, 10.0, len(network.measured_paths)) if times is None else times
    counts = rng.uniform(5.0, 60.0, len(network.measured_segments)) if counts is None else counts
    return FieldMeasurements(list(network.measured_paths), times, list(network.measured_segments),
                             counts, 0.15)


@pytest.fixture(scope="session")
def medium_scenario():
    return build_scenario(ScenarioSpec(name="medium_corridor"))


@pytest.fixture
def quiet_config(params):
    return SimulatorConfig(params=params, sigma_v=0.0, demand_noise="deterministic")


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
