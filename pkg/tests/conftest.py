import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lf4d.perf import enable_heap_reuse

settings.register_profile(
    "lf4d", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("lf4d")

enable_heap_reuse()

# Acceptance-criterion results, printed as one line each after the run.
_CRITERIA = {}


def record_criterion(number, passed, detail=""):
    _CRITERIA[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
