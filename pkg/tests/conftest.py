import numpy as np
import pytest

from neuralfield.modeslab import InputField, WaveguideSpec, solve_modes
from neuralfield.tasks import SimConfig


@pytest.fixture(scope="session")
def default_spec():
    return WaveguideSpec()


@pytest.fixture(scope="session")
def default_basis(default_spec):
    return solve_modes(default_spec)


@pytest.fixture(scope="session")
def small_spec():
    # a handful of modes with a delay spread of several timesteps
    return WaveguideSpec(width_um=6.0, length_mm=39.0, n_core=2.556, n_clad=1.444)


@pytest.fixture(scope="session")
def small_basis(small_spec):
    return solve_modes(small_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_sim():
    return SimConfig()


@pytest.fixture(scope="session")
def input_field():
    return InputField()


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one verdict per acceptance criterion; summarized at the end of the run."""

    def record(n: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {n} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
