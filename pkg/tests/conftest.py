import numpy as np
import pytest

from ssl_iqa.model import ArchitectureConfig, init

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {name} ({detail})")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_arch():
    return ArchitectureConfig(input_dim=8, shared_layer_widths=(6,), head_layer_widths=(4, 1), num_heads=3)


@pytest.fixture
def small_params(small_arch):
    return init(small_arch, seed=7)
