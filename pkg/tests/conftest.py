import time

import pytest

from csthin.thinning import SynthesisSpec, synthesize


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    REPORT = getattr(module, "REPORT", None)
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(REPORT):
        terminalreporter.write_line(REPORT[key])


@pytest.fixture(scope="session")
def full_spec():
    """25x25 half-wave URA, 30 dB Chebyshev, isotropic, xi = 5 % of ||p||."""
    return SynthesisSpec()


@pytest.fixture(scope="session")
def full_run(full_spec):
    t0 = time.perf_counter()
    result = synthesize(full_spec)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def full_result(full_run):
    return full_run[0]
