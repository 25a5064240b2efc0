import pytest

ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Store the outcome of an acceptance criterion before it is asserted."""

    def record(criterion, passed, detail=""):
        ACCEPTANCE[str(criterion)] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda c: (len(c), c)):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
