import numpy as np
import pytest

from lstmp.cells import ArchSpec

SMALL_SPECS = [
    ArchSpec("RNN", 5, 7, 6),
    ArchSpec("LSTM", 5, 7, 6),
    ArchSpec("LSTM_RP", 5, 7, 6, n_r=4),
    ArchSpec("LSTM_RP_NP", 5, 7, 6, n_r=4, n_p=3),
]


@pytest.fixture(params=SMALL_SPECS, ids=lambda s: s.kind.value)
def small_spec(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[number])
