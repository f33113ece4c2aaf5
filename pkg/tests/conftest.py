import pytest

# (criterion name, passed, elapsed seconds) appended by tests/test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[str, bool, float]] = []


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_RESULTS


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, elapsed in ACCEPTANCE_RESULTS:
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  ({elapsed:.1f}s)")
