import pytest

from doublestable import build_tables, make_renewal_law

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def law03():
    return make_renewal_law(0.3)


@pytest.fixture(scope="session")
def tables03(law03):
    return build_tables(law03, 10**5)


@pytest.fixture(scope="session")
def tables03_small(law03):
    return build_tables(law03, 4096)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
