"""Class taxonomy: a rooted DAG of concepts whose leaves are the dataset classes.

Internal concepts have no images of their own, so every node is weighted by
its cumulative instance count, i.e. the sum of ``own_instance_count`` over the
set of its descendants (itself included). A leaf reachable through several
paths is counted once per ancestor.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Iterable, Mapping

from .errors import (
    CycleDetected,
    InvalidTaxonomy,
    LeafWithoutInstances,
    MultipleRoots,
    UnknownClass,
    UnknownNode,
    UnknownParent,
)


@dataclass(frozen=True)
class ConceptNode:
    id: str
    display_name: str
    parent_ids: tuple[str, ...] = ()
    own_instance_count: int = 0


@dataclass(frozen=True, eq=False)
class TaxonomyGraph:
    """Validated, immutable taxonomy.

    Build instances with :func:`load_taxonomy` or :meth:`from_nodes`; the
    constructor does no validation of its own.
    """

    nodes: Mapping[str, ConceptNode]
    leaf_class_ids: tuple[str, ...]
    cumulative_count: Mapping[str, int]
    root_id: str
    children: Mapping[str, tuple[str, ...]] = field(repr=False)
    _ancestors: Mapping[str, frozenset[str]] = field(repr=False)

    @classmethod
    def from_nodes(
        cls, nodes: Iterable[ConceptNode], leaf_order: Iterable[str] | None = None
    ) -> "TaxonomyGraph":
        table: dict[str, ConceptNode] = {}
        for node in nodes:
            if node.id in table:
                raise InvalidTaxonomy(f"duplicate node id {node.id!r}")
            if node.own_instance_count < 0:
                raise InvalidTaxonomy(f"node {node.id!r} has a negative instance count")
            table[node.id] = node

        children: dict[str, list[str]] = {nid: [] for nid in table}
        for node in table.values():
            if len(set(node.parent_ids)) != len(node.parent_ids):
                raise InvalidTaxonomy(f"node {node.id!r} lists a parent twice")
            for parent in node.parent_ids:
                if parent not in table:
                    raise UnknownParent(node.id, parent)
                children[parent].append(node.id)

        sorter = TopologicalSorter({nid: node.parent_ids for nid, node in table.items()})
        try:
            order = list(sorter.static_order())
        except CycleError as exc:
            cycle = exc.args[1]
            raise CycleDetected(dict.fromkeys(cycle)) from None

        roots = [nid for nid, node in table.items() if not node.parent_ids]
        if len(roots) != 1:
            raise MultipleRoots(roots)

        leaves = sorted(nid for nid, kids in children.items() if not kids)
        for leaf in leaves:
            if table[leaf].own_instance_count < 1:
                raise LeafWithoutInstances(leaf)

        if leaf_order is None:
            leaf_ids = tuple(leaves)
        else:
            leaf_ids = tuple(leaf_order)
            if len(set(leaf_ids)) != len(leaf_ids):
                raise InvalidTaxonomy("leaf_order contains duplicates")
            if set(leaf_ids) != set(leaves):
                extra = sorted(set(leaf_ids) - set(leaves))
                missing = sorted(set(leaves) - set(leaf_ids))
                raise InvalidTaxonomy(
                    f"leaf_order does not match the leaves (not leaves: {extra}, missing: {missing})"
                )

        # parents precede children in ``order``
        ancestors: dict[str, frozenset[str]] = {}
        for nid in order:
            acc = {nid}
            for parent in table[nid].parent_ids:
                acc |= ancestors[parent]
            ancestors[nid] = frozenset(acc)

        cumulative = dict.fromkeys(table, 0)
        for nid, anc in ancestors.items():
            own = table[nid].own_instance_count
            for a in anc:
                cumulative[a] += own

        return cls(
            nodes=table,
            leaf_class_ids=leaf_ids,
            cumulative_count=cumulative,
            root_id=roots[0],
            children={k: tuple(v) for k, v in children.items()},
            _ancestors=ancestors,
        )

    @property
    def num_classes(self) -> int:
        return len(self.leaf_class_ids)

    def is_leaf(self, node_id: str) -> bool:
        return node_id in self.children and not self.children[node_id]

    def content_hash(self) -> str:
        """SHA-256 of the canonical JSON serialization."""
        return hashlib.sha256(dump_taxonomy(self).encode("utf-8")).hexdigest()


def ancestor_set(g: TaxonomyGraph, node_id: str) -> frozenset[str]:
    """All nodes from which ``node_id`` is reachable, ``node_id`` included."""
    try:
        return g._ancestors[node_id]
    except KeyError:
        raise UnknownNode(node_id) from None


def specificity_key(g: TaxonomyGraph, node_id: str) -> tuple[int, int, str]:
    """Sort key putting the most specific node first.

    Smaller cumulative count wins; on equal counts a descendant beats its
    ancestors (it always has strictly more ancestors), then the smaller id.
    """
    return (g.cumulative_count[node_id], -len(g._ancestors[node_id]), node_id)


def lowest_superordinate(g: TaxonomyGraph, c1: str, c2: str) -> str:
    """Most specific common ancestor of two leaf classes."""
    for c in (c1, c2):
        if not g.is_leaf(c):
            raise UnknownClass(c)
    common = g._ancestors[c1] & g._ancestors[c2]
    return min(common, key=lambda nid: specificity_key(g, nid))


def parse_taxonomy(data: Mapping) -> TaxonomyGraph:
    if not isinstance(data, Mapping) or not isinstance(data.get("nodes"), list):
        raise InvalidTaxonomy("taxonomy must be an object with a 'nodes' list")
    nodes = []
    for i, raw in enumerate(data["nodes"]):
        try:
            node_id = raw["id"]
            parents = raw.get("parents", [])
            instances = raw.get("instances", 0)
            name = raw.get("name", node_id)
        except (TypeError, KeyError, AttributeError):
            raise InvalidTaxonomy(f"node #{i} is malformed: {raw!r}") from None
        if not isinstance(node_id, str) or not isinstance(parents, list) or not all(
            isinstance(p, str) for p in parents
        ):
            raise InvalidTaxonomy(f"node #{i} has invalid id or parents")
        if isinstance(instances, bool) or not isinstance(instances, int):
            raise InvalidTaxonomy(f"node {node_id!r} has a non-integer instance count")
        nodes.append(ConceptNode(node_id, str(name), tuple(parents), instances))
    return TaxonomyGraph.from_nodes(nodes, data.get("leaf_order"))


def load_taxonomy(source: str | bytes | Path) -> TaxonomyGraph:
    """Load a taxonomy from a JSON string/bytes or from a file path."""
    if isinstance(source, Path):
        source = source.read_text(encoding="utf-8")
    try:
        data = json.loads(source)
    except json.JSONDecodeError as exc:
        raise InvalidTaxonomy(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_taxonomy(data)


def taxonomy_to_dict(g: TaxonomyGraph) -> dict:
    return {
        "nodes": [
            {
                "id": n.id,
                "name": n.display_name,
                "parents": list(n.parent_ids),
                "instances": n.own_instance_count,
            }
            for n in g.nodes.values()
        ],
        "leaf_order": list(g.leaf_class_ids),
    }


def dump_taxonomy(g: TaxonomyGraph, indent: int | None = 1) -> str:
    return json.dumps(taxonomy_to_dict(g), indent=indent, ensure_ascii=False) + "\n"
