"""Jiang-Conrath pseudo-distance between leaf classes and task coarsity."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import SingletonClassSet, UnknownClass, ValidationError
from .taxonomy import TaxonomyGraph, lowest_superordinate, specificity_key

# Logarithm used for information content. Flip here to change the unit.
LOG = np.log


def jc_distance(g: TaxonomyGraph, c1: str, c2: str) -> float:
    """2 log|lso(c1, c2)| - log|c1| - log|c2| with cumulative counts."""
    lso = lowest_superordinate(g, c1, c2)
    count = g.cumulative_count
    return max(float(2 * LOG(count[lso]) - LOG(count[c1]) - LOG(count[c2])), 0.0)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    class_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        n = len(self.class_ids)
        if values.shape != (n, n):
            raise ValidationError(f"distance matrix shape {values.shape} does not match {n} classes")
        if len(set(self.class_ids)) != n:
            raise ValidationError("duplicate class ids in distance matrix")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("distances must be finite and non-negative")
        if np.any(np.diag(values) != 0) or not np.array_equal(values, values.T):
            raise ValidationError("distance matrix must be symmetric with a zero diagonal")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.class_ids)})

    def __len__(self) -> int:
        return len(self.class_ids)

    def index_of(self, class_id: str) -> int:
        try:
            return self._index[class_id]
        except KeyError:
            raise UnknownClass(class_id) from None

    def indices(self, class_ids: Iterable[str]) -> np.ndarray:
        return np.array([self.index_of(c) for c in class_ids], dtype=np.intp)

    def __getitem__(self, pair: tuple[str, str]) -> float:
        a, b = pair
        return float(self.values[self.index_of(a), self.index_of(b)])


def distance_matrix(g: TaxonomyGraph) -> DistanceMatrix:
    """All-pairs JC distances in the canonical leaf order.

    Nodes are visited from most to least specific; each visit claims the
    still-unassigned leaf pairs below it, so every pair ends up with its
    lowest superordinate.
    """
    leaves = g.leaf_class_ids
    pos = {c: i for i, c in enumerate(leaves)}
    n = len(leaves)

    below: dict[str, list[int]] = {nid: [] for nid in g.nodes}
    for leaf in leaves:
        for a in g._ancestors[leaf]:
            below[a].append(pos[leaf])

    lso_count = np.zeros((n, n), dtype=np.float64)
    assigned = np.zeros((n, n), dtype=bool)
    remaining = n * n
    for nid in sorted(g.nodes, key=lambda x: specificity_key(g, x)):
        idx = below[nid]
        if not idx:
            continue
        block = np.ix_(idx, idx)
        fresh = ~assigned[block]
        if not fresh.any():
            continue
        sub = lso_count[block]
        sub[fresh] = g.cumulative_count[nid]
        lso_count[block] = sub
        assigned[block] = True
        remaining -= int(fresh.sum())
        if remaining == 0:
            break

    log_leaf = LOG(np.array([g.cumulative_count[c] for c in leaves], dtype=np.float64))
    values = 2 * LOG(lso_count) - log_leaf[:, None] - log_leaf[None, :]
    # exact zeros on the diagonal and exact symmetry regardless of rounding
    np.fill_diagonal(values, 0.0)
    values = np.maximum(np.triu(values, 1), 0.0)
    values = values + values.T
    return DistanceMatrix(leaves, values)


def coarsity(dm: DistanceMatrix, classes: Iterable[str]) -> float:
    """Mean squared distance over unordered pairs of distinct classes."""
    ids = list(dict.fromkeys(classes))
    if len(ids) < 2:
        raise SingletonClassSet(f"coarsity needs at least 2 distinct classes, got {len(ids)}")
    idx = dm.indices(ids)
    i, j = np.triu_indices(len(idx), 1)
    d = dm.values[idx[i], idx[j]]
    return float(np.mean(d * d))


def coarsity_naive(dm: DistanceMatrix, classes: Sequence[str]) -> float:
    pairs = list(combinations(classes, 2))
    return math.fsum(dm[a, b] ** 2 for a, b in pairs) / len(pairs)


def write_distance_csv(dm: DistanceMatrix, out) -> None:
    """Full symmetric matrix with header row and column, 17 significant digits."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["class_id", *dm.class_ids])
    for cid, row in zip(dm.class_ids, dm.values):
        writer.writerow([cid, *(format(float(v), ".17g") for v in row)])


def distance_csv(dm: DistanceMatrix) -> str:
    buf = io.StringIO()
    write_distance_csv(dm, buf)
    return buf.getvalue()


def read_distance_csv(path: str | Path) -> DistanceMatrix:
    return parse_distance_csv(Path(path).read_text(encoding="utf-8"))


def parse_distance_csv(text: str) -> DistanceMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValidationError("empty distance matrix file")
    header = rows[0][1:]
    body = rows[1:]
    if [r[0] for r in body] != header:
        raise ValidationError("distance matrix row labels do not match the header")
    try:
        values = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"bad number in distance matrix: {exc}") from None
    return DistanceMatrix(tuple(header), values.reshape(len(header), len(header)))
