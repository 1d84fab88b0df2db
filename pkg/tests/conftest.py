import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stablepot.geometry import Ball, Box, StableIndex

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def disc():
    return Ball([0.0, 0.0], 1.0)


@pytest.fixture
def square():
    return Box([0.0, 0.0], [1.0, 1.0])


@pytest.fixture
def idx21():
    return StableIndex(2, 1.0)


def rel(a, b):
    return abs(a - b) / abs(b)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def emit(number: int, title: str, passed: bool, detail: str = ""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
