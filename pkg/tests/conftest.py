import pytest

# criterion number -> (label, passed, report lines); filled by test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        label, passed, lines = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d} {'PASS' if passed else 'FAIL'}  {label}")
        for line in lines:
            terminalreporter.write_line(f"      {line}")
