import numpy as np
import pytest

from randopen.system import Realization, preset


@pytest.fixture(scope="session")
def quad():
    return preset("quadrupling-random-hole", seed=3)


@pytest.fixture(scope="session")
def omega(quad):
    return quad.environment.realize(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def constant_fibre(s):
    return Realization.constant(s)


ACCEPTANCE: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    """Store one acceptance verdict; printed by the terminal summary."""
    ACCEPTANCE[number] = (title, bool(ok), detail)
    print(f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
