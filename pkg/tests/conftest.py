import pytest

from ctmbound.ctmrg import GrowthSchedule, ctmrg_solve

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def small_states():
    """Converged 4 x 4 CTMRG states at 128 bits for all three models."""
    schedule = GrowthSchedule(target_n=4, polish_iters=10, tol="1e-25", max_iters=800)
    return {
        name: ctmrg_solve(name, schedule, bits=128)
        for name in ("hard-squares", "nak", "rwim")
    }


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
