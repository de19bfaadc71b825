"""Testbed generation: uniform and semantic (potential-matrix) class sampling.

Random streams are derived from the 64-bit seed with numpy's ``SeedSequence``
feeding ``PCG64``:

* class draws use ``SeedSequence(seed, spawn_key=(0,))``;
* instance draws for task ``i`` use ``SeedSequence(seed, spawn_key=(1, i))``.

Both are pure functions of the seed, so testbeds are byte-identical across
runs and platforms.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegeneratePotential,
    DuplicateInstance,
    InsufficientInstances,
    InvalidConfig,
    NotEnoughUniqueTasks,
    UnknownClass,
    ValidationError,
)
from .semantics import DistanceMatrix, coarsity
from .taxonomy import TaxonomyGraph

log = logging.getLogger(__name__)

STRATEGIES = ("uniform", "semantic")

# benchmark protocol defaults
DEFAULT_ALPHA = 0.383
DEFAULT_BETA = 100.0
DEFAULT_QUERIES = 10
DEFAULT_TASKS = 5000
DEFAULT_OVERSAMPLE = 2


@dataclass(frozen=True)
class SamplerConfig:
    ways: int = 5
    shots: int = 1
    queries_per_class: int = DEFAULT_QUERIES
    num_tasks: int = DEFAULT_TASKS
    oversample_factor: int = DEFAULT_OVERSAMPLE
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    strategy: str = "semantic"
    seed: int = 0

    def __post_init__(self):
        for name in ("ways", "shots", "queries_per_class", "num_tasks", "oversample_factor", "seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise InvalidConfig(f"{name} must be an integer, got {value!r}")
        if self.ways < 2:
            raise InvalidConfig("ways must be at least 2")
        if self.shots < 1 or self.queries_per_class < 1:
            raise InvalidConfig("shots and queries_per_class must be at least 1")
        if self.num_tasks < 1 or self.oversample_factor < 1:
            raise InvalidConfig("num_tasks and oversample_factor must be at least 1")
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InvalidConfig(f"{name} must be a finite non-negative number")
        if self.strategy not in STRATEGIES:
            raise InvalidConfig(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed must fit in an unsigned 64-bit integer")

    @property
    def per_class(self) -> int:
        return self.shots + self.queries_per_class

    @property
    def num_candidates(self) -> int:
        return self.num_tasks * self.oversample_factor

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SamplerConfig":
        return cls(**data)


class InstanceCatalog(Mapping):
    """Class id -> ordered tuple of instance ids."""

    def __init__(self, by_class: Mapping[str, Sequence[str]]):
        self._by_class = {c: tuple(ids) for c, ids in by_class.items()}
        seen = set()
        for c, ids in self._by_class.items():
            if not ids:
                raise ValidationError(f"class {c!r} has no instances in the catalog")
            for i in ids:
                if i in seen:
                    raise DuplicateInstance(i)
                seen.add(i)

    def __getitem__(self, class_id):
        return self._by_class[class_id]

    def __iter__(self):
        return iter(self._by_class)

    def __len__(self):
        return len(self._by_class)

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str]]) -> "InstanceCatalog":
        by_class: dict[str, list[str]] = {}
        for instance_id, class_id in rows:
            by_class.setdefault(class_id, []).append(instance_id)
        return cls(by_class)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["instance_id", "class_id"])
        for c, ids in self._by_class.items():
            for i in ids:
                writer.writerow([i, c])
        return buf.getvalue()


def load_catalog(path: str | Path) -> InstanceCatalog:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["instance_id", "class_id"]:
            raise ValidationError(f"{path}: expected header 'instance_id,class_id'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            rows.append((row[0], row[1]))
    return InstanceCatalog.from_rows(rows)


def build_potential(dm: DistanceMatrix, alpha: float) -> np.ndarray:
    """Base potential exp(-alpha * D); ones on the diagonal."""
    return np.exp(-alpha * dm.values)


def occurrence_penalty(occ, beta: float) -> np.ndarray:
    """Per-class weights exp(-beta * occ / max(occ))."""
    occ = np.asarray(occ, dtype=np.float64)
    return np.exp(-beta * occ / occ.max())


@dataclass
class SamplerState:
    """Running state of the class sampler.

    The potential is kept as ``log_potential = -alpha * D`` so that products
    of many small weights never underflow; ``base_potential`` is its exp.
    """

    class_ids: tuple[str, ...]
    log_potential: np.ndarray
    beta: float
    occ: np.ndarray
    rng: np.random.Generator
    seed: int = 0
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def create(cls, dm: DistanceMatrix, alpha: float, beta: float, seed: int = 0) -> "SamplerState":
        return cls(
            class_ids=dm.class_ids,
            log_potential=-alpha * dm.values,
            beta=beta,
            occ=np.ones(len(dm), dtype=np.int64),
            rng=class_stream(seed),
            seed=seed,
        )

    @property
    def base_potential(self) -> np.ndarray:
        return np.exp(self.log_potential)


def class_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0,))))


def instance_stream(seed: int, task_index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1, task_index)))
    )


def _draw(log_w: np.ndarray, available: np.ndarray, rng: np.random.Generator, state: SamplerState) -> int:
    """Draw an available index with probability proportional to exp(log_w).

    If every available weight is zero (-inf in log space) the draw falls back
    to uniform over the available classes and a warning is recorded.
    """
    w_log = np.where(available, log_w, -np.inf)
    if np.isnan(w_log).any():
        raise DegeneratePotential("class weights contain NaN")
    top = w_log.max()
    if not np.isfinite(top):
        choices = np.flatnonzero(available)
        if choices.size == 0:
            raise DegeneratePotential("no class left to draw")
        msg = "all class weights underflowed; fell back to uniform over remaining classes"
        log.warning(msg)
        state.warnings.append(msg)
        return int(choices[int(rng.random() * choices.size)])
    cdf = np.cumsum(np.exp(w_log - top))
    u = rng.random() * cdf[-1]
    return int(np.searchsorted(cdf, u, side="right"))


def sample_class_indices(state: SamplerState, n: int, uniform: bool = False) -> list[int]:
    """One pass of the potential-based class sampler, returning class indices.

    The first class is drawn proportionally to the occurrence penalty; after
    each draw the weights are multiplied by the drawn class's potential row
    and the class itself is removed. Occurrence counters are then increased.
    With ``uniform`` the weights stay flat and only the removal applies.
    """
    num = len(state.class_ids)
    if n > num:
        raise InvalidConfig(f"cannot draw {n} classes out of {num}")
    available = np.ones(num, dtype=bool)
    if uniform:
        log_w = np.zeros(num)
    else:
        occ = state.occ.astype(np.float64)
        log_w = -state.beta * occ / occ.max()
    chosen: list[int] = []
    for _ in range(n):
        c = _draw(log_w, available, state.rng, state)
        chosen.append(c)
        available[c] = False
        if not uniform:
            log_w = log_w + state.log_potential[c]
    state.occ[chosen] += 1
    return chosen


def sample_class_set(state: SamplerState, n: int, uniform: bool = False) -> list[str]:
    """Draw ``n`` distinct class ids (in draw order) and update occurrences."""
    return [state.class_ids[i] for i in sample_class_indices(state, n, uniform)]


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    class_ids: tuple[str, ...]
    support: Mapping[str, tuple[str, ...]]
    query: Mapping[str, tuple[str, ...]]
    coarsity: float

    @property
    def ways(self) -> int:
        return len(self.class_ids)

    def to_json(self) -> str:
        return json.dumps(
            {
                "task_id": self.task_id,
                "classes": list(self.class_ids),
                "support": {c: list(self.support[c]) for c in self.class_ids},
                "query": {c: list(self.query[c]) for c in self.class_ids},
                "coarsity": self.coarsity,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_dict(cls, data: Mapping) -> "TaskSpec":
        classes = tuple(data["classes"])
        return cls(
            task_id=int(data["task_id"]),
            class_ids=classes,
            support={c: tuple(data["support"][c]) for c in classes},
            query={c: tuple(data["query"][c]) for c in classes},
            coarsity=float(data["coarsity"]),
        )


def check_task(task: TaskSpec, catalog: InstanceCatalog | None = None) -> None:
    """Raise ValidationError unless ``task`` satisfies the TaskSpec invariants."""
    if len(set(task.class_ids)) != len(task.class_ids):
        raise ValidationError(f"task {task.task_id}: duplicate classes")
    if set(task.support) != set(task.class_ids) or set(task.query) != set(task.class_ids):
        raise ValidationError(f"task {task.task_id}: support/query classes differ from task classes")
    support = [i for c in task.class_ids for i in task.support[c]]
    query = [i for c in task.class_ids for i in task.query[c]]
    if len(set(support)) != len(support) or len(set(query)) != len(query):
        raise ValidationError(f"task {task.task_id}: repeated instance")
    if set(support) & set(query):
        raise ValidationError(f"task {task.task_id}: support and query overlap")
    if catalog is not None:
        for c in task.class_ids:
            members = set(catalog[c])
            if not members.issuperset(task.support[c]) or not members.issuperset(task.query[c]):
                raise ValidationError(f"task {task.task_id}: instance outside class {c!r}")


def _sample_instances(ids: Sequence[str], m: int, rng: np.random.Generator) -> list[str]:
    # partial Fisher-Yates over the catalog order
    pool = list(ids)
    size = len(pool)
    u = rng.random(m)
    for i in range(m):
        j = i + int(u[i] * (size - i))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:m]


def make_task(
    task_id: int,
    classes: Iterable[str],
    catalog: InstanceCatalog,
    dm: DistanceMatrix,
    shots: int,
    queries: int,
    seed: int,
) -> TaskSpec:
    """Attach instances to a class set: k support then q query per class."""
    ordered = tuple(sorted(classes, key=dm.index_of))
    rng = instance_stream(seed, task_id)
    support, query = {}, {}
    for c in ordered:
        ids = catalog.get(c, ())
        if len(ids) < shots + queries:
            raise InsufficientInstances(c, len(ids), shots + queries)
        drawn = _sample_instances(ids, shots + queries, rng)
        support[c] = tuple(drawn[:shots])
        query[c] = tuple(drawn[shots:])
    return TaskSpec(task_id, ordered, support, query, coarsity(dm, ordered))


def sample_task(
    state: SamplerState,
    catalog: InstanceCatalog,
    dm: DistanceMatrix,
    config: SamplerConfig,
    task_id: int = 0,
) -> TaskSpec:
    classes = sample_class_set(state, config.ways, uniform=config.strategy == "uniform")
    return make_task(task_id, classes, catalog, dm, config.shots, config.queries_per_class, config.seed)


@dataclass
class Testbed:
    config: SamplerConfig
    tasks: list[TaskSpec]
    taxonomy_sha256: str
    warnings: list[str] = field(default_factory=list)
    candidates_drawn: int = 0
    unique_candidates: int = 0

    __test__ = False  # not a pytest class

    def header(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "taxonomy_sha256": self.taxonomy_sha256,
            "strategy": self.config.strategy,
            "seed": self.config.seed,
            "warnings": list(self.warnings),
            "candidates_drawn": self.candidates_drawn,
            "unique_candidates": self.unique_candidates,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), ensure_ascii=False)]
        lines.extend(t.to_json() for t in self.tasks)
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text: str) -> "Testbed":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValidationError("empty testbed file")
        try:
            header = json.loads(lines[0])
            tasks = [TaskSpec.from_dict(json.loads(ln)) for ln in lines[1:]]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"malformed testbed file: {exc}") from None
        return cls(
            config=SamplerConfig.from_dict(header["config"]),
            tasks=tasks,
            taxonomy_sha256=header.get("taxonomy_sha256", ""),
            warnings=list(header.get("warnings", [])),
            candidates_drawn=header.get("candidates_drawn", 0),
            unique_candidates=header.get("unique_candidates", 0),
        )


def load_testbed(path: str | Path) -> Testbed:
    return Testbed.from_jsonl(Path(path).read_text(encoding="utf-8"))


def draw_candidates(state: SamplerState, config: SamplerConfig) -> list[list[int]]:
    uniform = config.strategy == "uniform"
    return [sample_class_indices(state, config.ways, uniform) for _ in range(config.num_candidates)]


def generate_testbed(
    g: TaxonomyGraph,
    dm: DistanceMatrix,
    catalog: InstanceCatalog,
    config: SamplerConfig,
    state: SamplerState | None = None,
) -> Testbed:
    """Draw candidates, drop repeated class sets, keep the first ``num_tasks``.

    Occurrence counters are updated after every candidate, duplicates
    included. Instances are drawn only for kept tasks, each from its own
    stream keyed by the task id.
    """
    if tuple(dm.class_ids) != tuple(g.leaf_class_ids):
        raise ValidationError("distance matrix classes do not match the taxonomy leaves")
    if config.ways > len(dm):
        raise InvalidConfig(f"ways={config.ways} exceeds the {len(dm)} available classes")
    for c in dm.class_ids:
        available = len(catalog.get(c, ()))
        if available < config.per_class:
            raise InsufficientInstances(c, available, config.per_class)
    unknown = set(catalog) - set(dm.class_ids)
    if unknown:
        raise UnknownClass(sorted(unknown)[0])

    if state is None:
        state = SamplerState.create(dm, config.alpha, config.beta, config.seed)
    candidates = draw_candidates(state, config)

    seen: set[frozenset[int]] = set()
    unique: list[list[int]] = []
    for cand in candidates:
        key = frozenset(cand)
        if key not in seen:
            seen.add(key)
            unique.append(cand)
    if len(unique) < config.num_tasks:
        raise NotEnoughUniqueTasks(len(unique), config.num_tasks)

    tasks = [
        make_task(
            i,
            (dm.class_ids[c] for c in cand),
            catalog,
            dm,
            config.shots,
            config.queries_per_class,
            config.seed,
        )
        for i, cand in enumerate(unique[: config.num_tasks])
    ]
    return Testbed(
        config=config,
        tasks=tasks,
        taxonomy_sha256=g.content_hash(),
        warnings=list(state.warnings),
        candidates_drawn=len(candidates),
        unique_candidates=len(unique),
    )


def participation(testbed: Testbed, class_ids: Sequence[str]) -> np.ndarray:
    """Fraction of tasks that contain each class, in ``class_ids`` order."""
    pos = {c: i for i, c in enumerate(class_ids)}
    counts = np.zeros(len(class_ids), dtype=np.int64)
    for task in testbed.tasks:
        for c in task.class_ids:
            try:
                counts[pos[c]] += 1
            except KeyError:
                raise UnknownClass(c) from None
    return counts / len(testbed.tasks)
