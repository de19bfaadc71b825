"""Few-shot classifiers operating on frozen embeddings.

Every classifier returns, for each query, the task's classes ranked from
most to least likely as integer positions into the task's class order.
Ties always resolve toward the earlier class in that order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..errors import DimensionMismatch, InvalidConfig
from ..sampler import TaskSpec
from .embeddings import EmbeddingStore

METHODS = ("protonet", "finetune", "bdcspn")

DEFAULTS: dict[str, dict[str, float]] = {
    "protonet": {},
    "finetune": {"steps": 10, "learning_rate": 1e-3},
    "bdcspn": {"temperature": 1.0, "shift_weight": 0.5},
}


@dataclass(frozen=True)
class ClassifierSpec:
    method: str = "protonet"
    hyperparameters: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidConfig(f"unknown method {self.method!r}; choose from {METHODS}")
        params = dict(DEFAULTS[self.method])
        unknown = set(self.hyperparameters) - set(params)
        if unknown:
            raise InvalidConfig(f"{self.method} does not accept {sorted(unknown)}")
        params.update(self.hyperparameters)
        if self.method == "finetune":
            if int(params["steps"]) != params["steps"] or params["steps"] < 0:
                raise InvalidConfig("steps must be a non-negative integer")
            params["steps"] = int(params["steps"])
            if params["learning_rate"] < 0:
                raise InvalidConfig("learning_rate must be non-negative")
        if self.method == "bdcspn":
            if params["temperature"] <= 0:
                raise InvalidConfig("temperature must be positive")
            if not 0 <= params["shift_weight"] <= 1:
                raise InvalidConfig("shift_weight must lie in [0, 1]")
        object.__setattr__(self, "hyperparameters", params)


def rank_scores(scores: np.ndarray) -> np.ndarray:
    """Rank columns by decreasing score, stable on ties."""
    return np.argsort(-scores, axis=1, kind="stable")


def support_arrays(store: EmbeddingStore, task: TaskSpec) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for label, c in enumerate(task.class_ids):
        ids = task.support[c]
        xs.append(store.matrix(ids, task.task_id))
        ys.extend([label] * len(ids))
    return np.vstack(xs), np.array(ys, dtype=np.intp)


def query_arrays(store: EmbeddingStore, task: TaskSpec) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for label, c in enumerate(task.class_ids):
        ids = task.query[c]
        xs.append(store.matrix(ids, task.task_id))
        ys.extend([label] * len(ids))
    return np.vstack(xs), np.array(ys, dtype=np.intp)


def compute_prototypes(store: EmbeddingStore, task: TaskSpec) -> dict[str, np.ndarray]:
    """Mean support embedding of each class."""
    return {
        c: store.matrix(task.support[c], task.task_id).mean(axis=0) for c in task.class_ids
    }


def _as_matrix(prototypes) -> np.ndarray:
    if isinstance(prototypes, Mapping):
        return np.vstack(list(prototypes.values())).astype(np.float64)
    return np.atleast_2d(np.asarray(prototypes, dtype=np.float64))


def squared_distances(queries: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    if queries.shape[1] != prototypes.shape[1]:
        raise DimensionMismatch(
            f"query dimension {queries.shape[1]} != prototype dimension {prototypes.shape[1]}"
        )
    # centring on the prototype mean keeps the expansion well conditioned
    center = prototypes.mean(axis=0)
    q = queries - center
    p = prototypes - center
    d2 = (q * q).sum(axis=1)[:, None] + (p * p).sum(axis=1)[None, :] - 2.0 * q @ p.T
    return np.maximum(d2, 0.0)


def protonet_predict(prototypes, queries) -> np.ndarray:
    """Rank prototypes by ascending squared Euclidean distance to each query."""
    protos = _as_matrix(prototypes)
    if len(protos) == 0:
        raise DimensionMismatch("no prototypes")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    return rank_scores(-squared_distances(q, protos))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def bdcspn_rectify(prototypes, queries, temperature: float = 1.0, shift_weight: float = 0.5) -> np.ndarray:
    """Shift prototypes toward the queries pseudo-labelled to them.

    Each query goes to its nearest prototype with confidence
    ``softmax(-d^2 / temperature)`` at that prototype. A class with assigned
    queries moves to ``(1 - shift_weight) * prototype + shift_weight * m``,
    ``m`` being the confidence-weighted mean of those queries; the others
    stay put.
    """
    protos = _as_matrix(prototypes)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    d2 = squared_distances(q, protos)
    conf = _softmax(-d2 / temperature)
    assigned = np.argmin(d2, axis=1)
    out = protos.copy()
    for c in range(len(protos)):
        mask = assigned == c
        if not mask.any():
            continue
        w = conf[mask, c]
        m = (w[:, None] * q[mask]).sum(axis=0) / w.sum()
        out[c] = (1 - shift_weight) * protos[c] + shift_weight * m
    return out


def bdcspn_predict(prototypes, queries, temperature: float = 1.0, shift_weight: float = 0.5) -> np.ndarray:
    return protonet_predict(bdcspn_rectify(prototypes, queries, temperature, shift_weight), queries)


def softmax_xent(weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy of a linear softmax head and its analytic gradients.

    Returns ``(loss, d_weights, d_bias)``; ``weights`` has shape (classes, dim).
    """
    n = len(y)
    logits = x @ weights.T + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(n), y]))
    delta = _softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, delta.T @ x, delta.sum(axis=0)


def finetune_fit(x: np.ndarray, y: np.ndarray, n_classes: int, steps: int = 10, learning_rate: float = 1e-3):
    """Full-batch gradient descent on a zero-initialised linear head."""
    weights = np.zeros((n_classes, x.shape[1]))
    bias = np.zeros(n_classes)
    for _ in range(steps):
        _, dw, db = softmax_xent(weights, bias, x, y)
        weights -= learning_rate * dw
        bias -= learning_rate * db
    return weights, bias


def finetune_fit_predict(store: EmbeddingStore, task: TaskSpec, steps: int = 10, learning_rate: float = 1e-3) -> np.ndarray:
    x, y = support_arrays(store, task)
    q, _ = query_arrays(store, task)
    weights, bias = finetune_fit(x, y, task.ways, steps, learning_rate)
    return rank_scores(q @ weights.T + bias)


# (support_x, support_y, query_x, n_classes) -> rankings
Predictor = Callable[[np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]


def _prototypes_from_arrays(x: np.ndarray, y: np.ndarray, n: int) -> np.ndarray:
    return np.vstack([x[y == c].mean(axis=0) for c in range(n)])


def make_predictor(spec: ClassifierSpec) -> Predictor:
    p = spec.hyperparameters
    if spec.method == "protonet":
        return lambda x, y, q, n: protonet_predict(_prototypes_from_arrays(x, y, n), q)
    if spec.method == "bdcspn":
        return lambda x, y, q, n: bdcspn_predict(
            _prototypes_from_arrays(x, y, n), q, p["temperature"], p["shift_weight"]
        )

    def finetune(x, y, q, n):
        weights, bias = finetune_fit(x, y, n, p["steps"], p["learning_rate"])
        return rank_scores(q @ weights.T + bias)

    return finetune
