import json

import numpy as np
import pytest
from hypothesis import settings

from aimadapt.adapt import setup_problem
from aimadapt.fermion import DATA_DIR, load_fixture

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fixtures_json():
    return json.loads((DATA_DIR / "fixtures.json").read_text())


@pytest.fixture(scope="session")
def h2_ints():
    return load_fixture("h2")


@pytest.fixture(scope="session")
def h4_ints():
    return load_fixture("h4")


@pytest.fixture(scope="session")
def h4_jw_qeb(h4_ints):
    return setup_problem(h4_ints, "JW", "QEB")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance report ----------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def report():
    """Record one acceptance criterion; the terminal summary prints all of them."""
    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE[number] = (bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
