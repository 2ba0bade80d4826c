import numpy as np
import pytest

# (criterion, detail, passed) rows appended by tests/test_acceptance.py; the
# terminal summary prints one line per criterion at the end of the run.
ACCEPTANCE: list[tuple[str, str, bool]] = []


def record_acceptance(name: str, detail: str, passed: bool) -> None:
    ACCEPTANCE.append((name, detail, passed))


@pytest.fixture
def acceptance():
    return record_acceptance


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, detail, ok in ACCEPTANCE:
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {name}: {detail}")
