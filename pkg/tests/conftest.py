import pytest

from .oracles import projected_gradient_lsq, random_problems

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def qp_oracle_100():
    """The 100 random 6x8 bounded least-squares instances and their oracle objectives."""
    data = random_problems(100)
    _, f = projected_gradient_lsq(*data)
    return data, f


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
