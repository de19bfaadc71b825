import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_graph, taxonomy_json
from oracles import brute_counts, brute_lso, descendants
from semtask.errors import (
    CycleDetected,
    InvalidTaxonomy,
    LeafWithoutInstances,
    MultipleRoots,
    UnknownClass,
    UnknownNode,
    UnknownParent,
)
from semtask.fixtures import random_taxonomy, tiered_like_taxonomy
from semtask.taxonomy import (
    ancestor_set,
    dump_taxonomy,
    load_taxonomy,
    lowest_superordinate,
)


def test_chain_counts(chain):
    assert dict(chain.cumulative_count) == {"leaf": 10, "A": 10, "root": 10}
    assert chain.leaf_class_ids == ("leaf",)
    assert chain.root_id == "root"


def test_diamond_counts_leaf_once(diamond):
    assert diamond.cumulative_count["root"] == 7
    assert diamond.cumulative_count["A"] == diamond.cumulative_count["B"] == 7


def test_tiered_fixture_shape():
    g = tiered_like_taxonomy()
    assert len(g.leaf_class_ids) == 160
    assert g.nodes[g.root_id].display_name == "entity"
    assert g.cumulative_count[g.root_id] == sum(
        g.nodes[c].own_instance_count for c in g.leaf_class_ids
    )
    assert any(len(n.parent_ids) > 1 for n in g.nodes.values())


def test_leaf_order_defaults_to_sorted():
    g = make_graph([("r", [], 0), ("z", ["r"], 1), ("a", ["r"], 1), ("m", ["r"], 1)])
    assert g.leaf_class_ids == ("a", "m", "z")


def test_explicit_leaf_order_kept():
    g = make_graph([("r", [], 0), ("z", ["r"], 1), ("a", ["r"], 1)], leaf_order=["z", "a"])
    assert g.leaf_class_ids == ("z", "a")


@pytest.mark.parametrize("order", [["z"], ["z", "a", "r"], ["z", "z", "a"]])
def test_bad_leaf_order(order):
    with pytest.raises(InvalidTaxonomy):
        make_graph([("r", [], 0), ("z", ["r"], 1), ("a", ["r"], 1)], leaf_order=order)


def test_cycle_detected():
    with pytest.raises(CycleDetected) as err:
        make_graph([("r", [], 0), ("a", ["r", "b"], 0), ("b", ["a"], 0), ("c", ["b"], 3)])
    assert set(err.value.nodes) == {"a", "b"}


def test_multiple_roots():
    with pytest.raises(MultipleRoots) as err:
        make_graph([("r1", [], 0), ("r2", [], 0), ("c", ["r1", "r2"], 3)])
    assert err.value.roots == ["r1", "r2"]


def test_unknown_parent():
    with pytest.raises(UnknownParent) as err:
        make_graph([("r", [], 0), ("c", ["ghost"], 3)])
    assert err.value.parent == "ghost"


def test_leaf_without_instances():
    with pytest.raises(LeafWithoutInstances) as err:
        make_graph([("r", [], 0), ("c", ["r"], 0), ("d", ["r"], 2)])
    assert err.value.leaf == "c"


@pytest.mark.parametrize(
    "text",
    [
        "not json",
        json.dumps({"nodes": {}}),
        json.dumps({"nodes": [{"name": "x"}]}),
        json.dumps({"nodes": [{"id": "r", "instances": 1.5}]}),
        json.dumps({"nodes": [{"id": "r"}, {"id": "r", "parents": ["r"]}]}),
    ],
)
def test_malformed_input(text):
    with pytest.raises(InvalidTaxonomy):
        load_taxonomy(text)


def test_ancestor_set_examples(chain, diamond):
    assert ancestor_set(chain, "root") == {"root"}
    assert ancestor_set(chain, "leaf") == {"leaf", "A", "root"}
    assert ancestor_set(diamond, "leaf") == {"leaf", "A", "B", "root"}
    with pytest.raises(UnknownNode):
        ancestor_set(chain, "nope")


def test_lso_examples():
    g = make_graph([("root", [], 0), ("A", ["root"], 0), ("c1", ["A"], 3), ("c2", ["A"], 4)])
    assert lowest_superordinate(g, "c1", "c2") == "A"
    assert lowest_superordinate(g, "c1", "c1") == "c1"
    with pytest.raises(UnknownClass):
        lowest_superordinate(g, "c1", "A")


def test_lso_self_even_when_counts_tie(chain):
    # leaf, A and root all hold 10 instances; the leaf itself is most specific
    assert lowest_superordinate(chain, "leaf", "leaf") == "leaf"


def test_lso_prefers_smaller_count_over_name():
    g = make_graph(
        [
            ("r", [], 0),
            ("big", ["r"], 0),
            ("small", ["r"], 0),
            ("x", ["big", "small"], 5),
            ("y", ["big", "small"], 5),
            ("z", ["big"], 50),
        ]
    )
    assert lowest_superordinate(g, "x", "y") == "small"


def test_roundtrip_content_identical():
    g = tiered_like_taxonomy()
    text = dump_taxonomy(g)
    again = load_taxonomy(text)
    assert dump_taxonomy(again) == text
    assert again.content_hash() == g.content_hash()


def test_counts_match_bruteforce(rng):
    for _ in range(50):
        g = random_taxonomy(rng)
        assert dict(g.cumulative_count) == brute_counts(g.nodes)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lso_matches_oracle_and_properties(seed):
    g = random_taxonomy(np.random.default_rng(seed))
    counts = brute_counts(g.nodes)
    leaves = g.leaf_class_ids
    for a in leaves:
        assert ancestor_set(g, a) == {v for v in g.nodes if a in descendants(g.nodes, v)}
        for b in leaves:
            lso = lowest_superordinate(g, a, b)
            assert lso == brute_lso(g.nodes, a, b, counts)
            assert lso == lowest_superordinate(g, b, a)
            assert g.cumulative_count[lso] >= max(g.cumulative_count[a], g.cumulative_count[b])


def test_root_count_is_total(rng):
    for _ in range(20):
        g = random_taxonomy(rng)
        assert g.cumulative_count[g.root_id] == sum(n.own_instance_count for n in g.nodes.values())
        for nid, node in g.nodes.items():
            for p in node.parent_ids:
                assert g.cumulative_count[p] >= g.cumulative_count[nid]


def test_taxonomy_json_helper_roundtrip():
    text = taxonomy_json([("r", [], 0), ("c", ["r"], 2)])
    assert load_taxonomy(text).leaf_class_ids == ("c",)
