import numpy as np
import pytest
from hypothesis import settings

from burden_control.model import PatientParams

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_params(**kw) -> PatientParams:
    base = dict(c_low=0.7, lambda_low=0.4, lambda_high=1.0, b=0.8, x0=2.5,
                gamma_low=0.5, gamma_high=1.0, alpha=0.95)
    base.update(kw)
    return PatientParams(**base)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
