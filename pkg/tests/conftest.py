import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
    print_blob=True,
)
settings.load_profile("default")


def pytest_runtest_logreport(report):
    """One PASS/FAIL line per acceptance criterion, printed at call time."""
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    verdict = "PASS" if report.passed else "FAIL"
    # capture-proof: write to the real terminal stream via pytest's reporter
    print(f"\n[acceptance] {name}: {verdict}", flush=True)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
