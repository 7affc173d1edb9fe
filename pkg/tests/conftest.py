from __future__ import annotations

import numpy as np
import pytest

from gmclab.kernels import bump_seed, poisson_seed

#: criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def bump1():
    return bump_seed(1)


@pytest.fixture(scope="session")
def bump2():
    return bump_seed(2)


@pytest.fixture(scope="session")
def poisson1():
    return poisson_seed(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
