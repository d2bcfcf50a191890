import pytest

from rideaccept.netgraph import Edge, RoadGraph, classify_speeds, generate_grid
from rideaccept.scenario import ScenarioConfig


def line_graph(lengths, speed_mps=10.0):
    """Bidirectional path 0-1-2-... with the given edge lengths."""
    nodes = [(0, 0.0, 0.0)]
    x = 0.0
    for i, length in enumerate(lengths, start=1):
        x += length
        nodes.append((i, x, 0.0))
    edges = []
    for i, length in enumerate(lengths):
        edges.append(Edge(len(edges), i, i + 1, float(length), speed_mps))
        edges.append(Edge(len(edges), i + 1, i, float(length), speed_mps))
    return RoadGraph(nodes, edges)


@pytest.fixture
def small_grid():
    g = generate_grid(6, 6, 200.0)
    return classify_speeds(g, g.bbox_centre(), 300.0, 18, 36)


@pytest.fixture
def small_scenario():
    return ScenarioConfig(horizon_s=3600.0, n_drivers=5, n_travellers=40, behavioural_share=0.6,
                          min_trip_m=200.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").split("(")[0])):
            terminalreporter.write_line(line)
