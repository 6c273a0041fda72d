import pytest
from hypothesis import settings

from degenbeam.evolution import IntegratorConfig, assemble_closed_loop, simulate
from degenbeam.model import certificate_constants, reference_config
from degenbeam.spatial import build_mesh

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def ref_config():
    return reference_config()


@pytest.fixture(scope="session")
def ref_constants(ref_config):
    return certificate_constants(ref_config)


@pytest.fixture(scope="session")
def ref_system(ref_config):
    return assemble_closed_loop(ref_config, build_mesh(64, 2.0), 64)


@pytest.fixture(scope="session")
def ref_record(ref_system, ref_constants):
    """Reference trajectory: N = M_d = 64, dt = 1e-2, T = 20."""
    return simulate(ref_system, IntegratorConfig(1e-2, 20.0), epsilon=ref_constants.epsilon)


@pytest.fixture(scope="session")
def small_system(ref_config):
    return assemble_closed_loop(ref_config, build_mesh(16, 2.0), 16)


_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion; returns ``ok``."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
