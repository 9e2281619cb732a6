import numpy as np
import pytest

from mrcm.model import load_fixture


@pytest.fixture(scope="session")
def three_mark():
    return load_fixture("three_mark")


@pytest.fixture(scope="session")
def boolean_d1():
    return load_fixture("boolean_d1")


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
