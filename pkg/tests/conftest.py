import json

import numpy as np
import pytest

from semtask.fixtures import (
    hierarchical_embeddings,
    synthetic_catalog,
    tiered_like_taxonomy,
)
from semtask.semantics import distance_matrix
from semtask.taxonomy import load_taxonomy


def taxonomy_json(nodes, leaf_order=None):
    data = {
        "nodes": [
            {"id": nid, "name": nid, "parents": list(parents), "instances": count}
            for nid, parents, count in nodes
        ]
    }
    if leaf_order is not None:
        data["leaf_order"] = leaf_order
    return json.dumps(data)


def make_graph(nodes, leaf_order=None):
    return load_taxonomy(taxonomy_json(nodes, leaf_order))


@pytest.fixture
def chain():
    return make_graph([("root", [], 0), ("A", ["root"], 0), ("leaf", ["A"], 10)])


@pytest.fixture
def diamond():
    return make_graph(
        [("root", [], 0), ("A", ["root"], 0), ("B", ["root"], 0), ("leaf", ["A", "B"], 7)]
    )


@pytest.fixture
def two_leaves():
    return make_graph([("root", [], 0), ("c1", ["root"], 10), ("c2", ["root"], 10)])


@pytest.fixture
def two_clusters():
    """Two tight sibling clusters of three classes under a shared root."""
    nodes = [("root", [], 0), ("a", ["root"], 0), ("b", ["root"], 0)]
    nodes += [(f"a{i}", ["a"], 1000) for i in range(1, 4)]
    nodes += [(f"b{i}", ["b"], 1000) for i in range(1, 4)]
    return make_graph(nodes)


@pytest.fixture(scope="session")
def tiered():
    g = tiered_like_taxonomy()
    return g, distance_matrix(g)


@pytest.fixture(scope="session")
def tiered_catalog(tiered):
    return synthetic_catalog(tiered[0], 20)


@pytest.fixture(scope="session")
def tiered_embeddings(tiered, tiered_catalog):
    return hierarchical_embeddings(tiered[0], tiered_catalog, dim=32, step_scale=0.5, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
