import numpy as np
import pytest

from eqgnn.graph_data import build_dataset, make_biased_graph


@pytest.fixture(scope="session")
def toy_graph():
    return make_biased_graph(n=160, n_features=8, seed=3, bias=1.0, group_ratio=2.0)


@pytest.fixture
def path3():
    """Three nodes on a path 0-1-2 with two features each."""
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return build_dataset(x, [0, 1, 0], [0, 1, 1], np.array([[0, 1], [1, 2]]), class_count=2)


# acceptance checks append "PASS/FAIL <id> <detail>" lines here; they are
# echoed after the run whatever the capture mode
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
