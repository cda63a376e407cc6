import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hiernav.gridworld import maze_from_text

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def text_maze(rows, heading="N", room=(1, 1, 4)):
    """Maze from a list of grid rows; header derived from the rows."""
    body = "\n".join(rows)
    header = f"{len(rows)} {len(rows[0])} {room[0]} {room[1]} {room[2]} 0 {heading}"
    return maze_from_text(header + "\n" + body + "\n")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
