from __future__ import annotations

import numpy as np
import pytest

from amdm import profile
from amdm.evaluation import DEFAULT_SCENARIO, EvalConfig


@pytest.fixture(scope="session")
def prof():
    return profile()


@pytest.fixture(scope="session")
def registry(prof):
    return prof.registry()


@pytest.fixture(scope="session")
def eval_config():
    return EvalConfig()


@pytest.fixture(scope="session")
def scenario():
    return DEFAULT_SCENARIO


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(n: int, passed: bool, detail: str) -> None:
    _CRITERIA[n] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")
