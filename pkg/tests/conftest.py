import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from glrt_toa.channel import ArrayGeometry
from glrt_toa.waveforms import SyncWaveform

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

# (criterion number, passed, detail) lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append((number, title, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} ({title}): {detail}")


@pytest.fixture(scope="session")
def wf():
    return SyncWaveform.zadoff_chu()


@pytest.fixture(scope="session")
def intf_wf():
    return SyncWaveform.zadoff_chu(root=29, periodic=True)


@pytest.fixture(scope="session")
def geom():
    return ArrayGeometry()


@pytest.fixture(scope="session")
def Ts(wf):
    return wf.sample_period


def cgauss(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def random_unitary(rng, M):
    q, r = np.linalg.qr(cgauss(rng, M, M))
    return q * (np.diag(r) / np.abs(np.diag(r)))[None, :]
