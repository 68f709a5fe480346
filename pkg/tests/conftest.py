import os

import pytest
from hypothesis import settings

from nexusloop.loop import LoopSpec
from nexusloop.model import PhysicalParams, derive_params

settings.register_profile("ci", max_examples=60, deadline=None)


@pytest.fixture(scope="session")
def params():
    return PhysicalParams.from_quoted()


@pytest.fixture(scope="session")
def derived(params):
    return derive_params(params)


@pytest.fixture(scope="session")
def spec(params):
    return LoopSpec.default(params)
settings.register_profile("thorough", max_examples=3000, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record one ``ACCEPTANCE n PASS/FAIL: ...`` line; shown in the terminal summary."""

    def record(n, ok, text, extra=()):
        line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {text}"
        ACCEPTANCE_LINES.append((n, line, list(extra)))
        print(line)
        for e in extra:
            print(f"    {e}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line, extra in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(line)
        for e in extra:
            terminalreporter.write_line(f"    {e}")
