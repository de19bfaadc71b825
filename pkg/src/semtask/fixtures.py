"""Deterministic synthetic inputs: taxonomies, instance catalogs, embeddings.

The real tieredImageNet / DF20 exports are not bundled. These generators
produce inputs with the same shape (a 160-leaf WordNet-like DAG rooted at
"entity", a 7-rank fungal tree) so that the whole pipeline can be run and
tested offline.
"""
from __future__ import annotations

import math

import numpy as np

from .evalkit.embeddings import EmbeddingStore
from .sampler import InstanceCatalog
from .taxonomy import ConceptNode, TaxonomyGraph

TIERED_IMAGES_PER_CLASS = 1300

# (attachment point, number of leaf classes); sums to 160
_TIERED_CATEGORIES = [
    ("dog", 22),
    ("bird", 19),
    ("aquatic_vertebrate", 18),
    ("fungus_like_plant", 16),
    ("device", 23),
    ("container", 21),
    ("craft", 20),
    ("geological_formation", 21),
]

_TIERED_BACKBONE = [
    ("physical_entity", ["entity"]),
    ("object", ["physical_entity"]),
    ("whole", ["object"]),
    ("natural_object", ["whole"]),
    ("artifact", ["whole"]),
    ("living_thing", ["whole"]),
    ("organism", ["living_thing"]),
    ("animal", ["organism"]),
    ("vertebrate", ["animal"]),
    ("mammal", ["vertebrate"]),
    ("carnivore", ["mammal"]),
    ("canine", ["carnivore"]),
    ("dog", ["canine"]),
    ("bird", ["vertebrate"]),
    ("aquatic_vertebrate", ["vertebrate"]),
    ("plant", ["organism"]),
    ("fungus_like_plant", ["plant"]),
    ("instrumentality", ["artifact"]),
    ("device", ["instrumentality"]),
    ("container", ["instrumentality"]),
    ("conveyance", ["instrumentality"]),
    ("craft", ["conveyance"]),
    ("geological_formation", ["natural_object"]),
]


def _split(total: int, rng: np.random.Generator, max_branch: int) -> list[int]:
    parts = int(rng.integers(2, max_branch + 1))
    parts = min(parts, total)
    cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [total]])).tolist()


def _grow(
    nodes: list[ConceptNode],
    parent: str,
    size: int,
    prefix: str,
    rng: np.random.Generator,
    counts,
    max_branch: int,
) -> list[str]:
    """Recursively split ``size`` leaves under ``parent``; return internal node ids."""
    internal = []
    for i, part in enumerate(_split(size, rng, max_branch) if size > 1 else [1]):
        nid = f"{prefix}.{i}"
        if part == 1:
            nodes.append(ConceptNode(nid, nid, (parent,), counts()))
        else:
            nodes.append(ConceptNode(nid, nid, (parent,), 0))
            internal.append(nid)
            internal.extend(_grow(nodes, nid, part, nid, rng, counts, max_branch))
    return internal


def tiered_like_taxonomy(seed: int = 0, extra_parent_rate: float = 0.06) -> TaxonomyGraph:
    """160-class WordNet-like DAG rooted at "entity", 1300 images per class.

    A few internal nodes receive a second parent from an earlier,
    shallower node of the same category, as in WordNet.
    """
    rng = np.random.default_rng(seed)
    nodes = [ConceptNode("entity", "entity", (), 0)]
    nodes += [ConceptNode(n, n.replace("_", " "), tuple(p), 0) for n, p in _TIERED_BACKBONE]
    categories = _TIERED_CATEGORIES
    for anchor, size in categories:
        start = len(nodes)
        internal = _grow(nodes, anchor, size, anchor, rng, lambda: TIERED_IMAGES_PER_CLASS, 4)
        depth = {nid: nid.count(".") for nid in internal}
        by_id = {n.id: k for k, n in enumerate(nodes) if k >= start}
        for nid in internal:
            if rng.random() >= extra_parent_rate:
                continue
            candidates = [
                o for o in internal
                if depth[o] < depth[nid] and not nid.startswith(o + ".")
            ]
            if not candidates:
                continue
            extra = candidates[int(rng.integers(len(candidates)))]
            k = by_id[nid]
            node = nodes[k]
            nodes[k] = ConceptNode(node.id, node.display_name, node.parent_ids + (extra,), 0)
    return TaxonomyGraph.from_nodes(nodes)


DF20_RANKS = ("kingdom", "phylum", "class", "order", "family", "genus", "species")


def df20_like_taxonomy(num_species: int = 1604, seed: int = 0) -> TaxonomyGraph:
    """Seven-rank fungal tree with heavy-tailed per-species image counts."""
    rng = np.random.default_rng(seed)
    branching = {"kingdom": 2, "phylum": 4, "class": 5, "order": 5, "family": 5, "genus": 6}
    nodes = [ConceptNode("life", "life", (), 0)]
    counter = {r: 0 for r in DF20_RANKS}

    def grow(parent: str, size: int, level: int):
        rank = DF20_RANKS[level]
        if rank == "species":
            for _ in range(size):
                counter[rank] += 1
                sid = f"species_{counter[rank]:04d}"
                n = int(max(30, round(math.exp(rng.normal(4.6, 1.0)))))
                nodes.append(ConceptNode(sid, sid, (parent,), n))
            return
        parts = _split(size, rng, branching[rank]) if size > 1 else [1]
        for part in parts:
            counter[rank] += 1
            nid = f"{rank}_{counter[rank]:04d}"
            nodes.append(ConceptNode(nid, nid, (parent,), 0))
            grow(nid, part, level + 1)

    grow("life", num_species, 0)
    return TaxonomyGraph.from_nodes(nodes)


def random_taxonomy(
    rng: np.random.Generator, max_nodes: int = 20, max_parents: int = 3, max_count: int = 50
) -> TaxonomyGraph:
    """Random rooted DAG: node i draws 1..max_parents parents among nodes < i."""
    size = int(rng.integers(2, max_nodes + 1))
    parents: list[tuple[str, ...]] = [()]
    ids = [f"n{i:02d}" for i in range(size)]
    for i in range(1, size):
        k = int(rng.integers(1, min(max_parents, i) + 1))
        chosen = rng.choice(i, size=k, replace=False)
        parents.append(tuple(ids[j] for j in sorted(chosen)))
    has_child = {p for ps in parents for p in ps}
    nodes = []
    for i, nid in enumerate(ids):
        if nid in has_child:
            own = int(rng.integers(0, 3)) * int(rng.integers(0, max_count))
        else:
            own = int(rng.integers(1, max_count + 1))
        nodes.append(ConceptNode(nid, nid, parents[i], own))
    return TaxonomyGraph.from_nodes(nodes)


def synthetic_catalog(g: TaxonomyGraph, per_class: int | None = None) -> InstanceCatalog:
    """Instance ids ``<class>/<k>``, ``per_class`` of them or the leaf's own count."""
    out = {}
    for c in g.leaf_class_ids:
        n = g.nodes[c].own_instance_count if per_class is None else per_class
        out[c] = [f"{c}/{k:05d}" for k in range(n)]
    return InstanceCatalog(out)


def hierarchical_embeddings(
    g: TaxonomyGraph,
    catalog: InstanceCatalog,
    dim: int = 32,
    step_scale: float = 1.0,
    noise_scale: float = 1.0,
    seed: int = 0,
) -> EmbeddingStore:
    """Embeddings whose class means follow a top-down Gaussian walk.

    The root sits at the origin. A node starts from the mean of its parents'
    positions and moves by a Gaussian step of per-coordinate variance
    ``step_scale**2 * (ln|p| - ln|v|)``, ``p`` being its smallest parent. On a
    tree the expected squared distance between two class means is then
    ``dim * step_scale**2 * D_JC``. Instances add isotropic noise of scale
    ``noise_scale``; the per-unit signal-to-noise ratio is
    ``(step_scale / noise_scale) ** 2``.
    """
    rng = np.random.default_rng(seed)
    position: dict[str, np.ndarray] = {}
    count = g.cumulative_count
    for nid in _topological(g):
        parents = g.nodes[nid].parent_ids
        if not parents:
            position[nid] = np.zeros(dim)
            continue
        base = np.mean([position[p] for p in parents], axis=0)
        nearest = min(parents, key=lambda p: (count[p], p))
        var = step_scale**2 * max(math.log(count[nearest]) - math.log(count[nid]), 0.0)
        position[nid] = base + math.sqrt(var) * rng.standard_normal(dim)

    ids, classes, rows = [], [], []
    for c in g.leaf_class_ids:
        members = catalog[c]
        noise = noise_scale * rng.standard_normal((len(members), dim))
        rows.append(position[c] + noise)
        ids.extend(members)
        classes.extend([c] * len(members))
    return EmbeddingStore(ids, classes, np.vstack(rows))


def _topological(g: TaxonomyGraph) -> list[str]:
    # a proper ancestor always has fewer ancestors than its descendants
    return sorted(g.nodes, key=lambda n: (len(g._ancestors[n]), n))
