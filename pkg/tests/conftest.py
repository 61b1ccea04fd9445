import numpy as np
import pytest

from flowcache import build_equivariant_backbone, make_uniform_grid
from flowcache.sampler import StateLayout, sample_layout

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome, then assert it."""

    def record(number, title, passed, detail=""):
        _CRITERIA.append((number, title, bool(passed), detail))
        assert passed, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_CRITERIA, key=lambda r: r[0]):
        mark = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{mark}] {number:>2}. {title}: {detail}")


@pytest.fixture(scope="session")
def layout():
    return StateLayout(n_nodes=6, edges="complete", node_dim=3, edge_dim=2)


@pytest.fixture(scope="session")
def backbone(layout):
    return build_equivariant_backbone(3, 16, seed=11, node_dim=layout.node_dim,
                                      edge_dim=layout.edge_dim)


@pytest.fixture
def x0(layout):
    return sample_layout(layout, seed=5)


@pytest.fixture(scope="session")
def grid20():
    return make_uniform_grid(20)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
