"""Testbed evaluation and report aggregation."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from ..errors import ValidationError, WindowTooLarge
from ..sampler import TaskSpec, Testbed
from .classifiers import ClassifierSpec, Predictor, make_predictor, query_arrays, support_arrays
from .embeddings import EmbeddingStore

Z_95 = 1.96
DEFAULT_WINDOW = 200


@dataclass(frozen=True)
class TaskResult:
    task_id: int
    coarsity: float
    top1_accuracy: float
    top5_accuracy: float | None = None


def accuracy_at(rankings: np.ndarray, labels: np.ndarray, k: int) -> float:
    hits = (rankings[:, :k] == labels[:, None]).any(axis=1)
    return float(hits.mean())


def evaluate_task(store: EmbeddingStore, task: TaskSpec, predict: Predictor) -> TaskResult:
    x, y = support_arrays(store, task)
    q, labels = query_arrays(store, task)
    rankings = np.asarray(predict(x, y, q, task.ways))
    if rankings.shape != (len(q), task.ways):
        raise ValidationError(
            f"task {task.task_id}: predictor returned shape {rankings.shape}, "
            f"expected {(len(q), task.ways)}"
        )
    top5 = accuracy_at(rankings, labels, 5) if task.ways > 5 else None
    return TaskResult(task.task_id, task.coarsity, accuracy_at(rankings, labels, 1), top5)


def mean_ci(values: Sequence[float]) -> tuple[float, float]:
    """Mean and 95% half-width 1.96 * sample std / sqrt(n)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return float(arr.mean()), 0.0
    return float(arr.mean()), float(Z_95 * arr.std(ddof=1) / math.sqrt(arr.size))


def sort_by_coarsity(results: Sequence[TaskResult]) -> list[TaskResult]:
    return sorted(results, key=lambda r: (r.coarsity, r.task_id))


def quartiles(results: Sequence[TaskResult], buckets: int = 4) -> list[dict]:
    """Mean top-1 per coarsity bucket; bucket 1 holds the finest tasks."""
    ordered = sort_by_coarsity(results)
    out = []
    for b, chunk in enumerate(np.array_split(np.arange(len(ordered)), buckets), start=1):
        part = [ordered[i] for i in chunk]
        if not part:
            out.append({"bucket": b, "size": 0, "coarsity_min": None, "coarsity_max": None,
                        "mean_top1": None, "mean_top5": None})
            continue
        top5 = [r.top5_accuracy for r in part if r.top5_accuracy is not None]
        out.append(
            {
                "bucket": b,
                "size": len(part),
                "coarsity_min": part[0].coarsity,
                "coarsity_max": part[-1].coarsity,
                "mean_top1": float(np.mean([r.top1_accuracy for r in part])),
                "mean_top5": float(np.mean(top5)) if top5 else None,
            }
        )
    return out


def rolling_series(coarsities: Sequence[float], accuracies: Sequence[float], window: int):
    """Windowed means (stride 1) over tasks already sorted by coarsity."""
    c = np.asarray(coarsities, dtype=np.float64)
    a = np.asarray(accuracies, dtype=np.float64)
    if window < 1:
        raise WindowTooLarge("window must be positive")
    if window > len(c):
        raise WindowTooLarge(f"window {window} exceeds the {len(c)} tasks")
    kernel = np.ones(window) / window
    return np.convolve(c, kernel, mode="valid"), np.convolve(a, kernel, mode="valid")


@dataclass
class EvalReport:
    method: str
    hyperparameters: dict
    ways: int
    results: list[TaskResult]
    window: int = DEFAULT_WINDOW
    mean_top1: float = field(init=False)
    ci95_top1: float = field(init=False)
    mean_top5: float | None = field(init=False)
    ci95_top5: float | None = field(init=False)
    quartiles: list[dict] = field(init=False)

    def __post_init__(self):
        self.results = sorted(self.results, key=lambda r: r.task_id)
        if not self.results:
            raise ValidationError("cannot report on an empty testbed")
        self.mean_top1, self.ci95_top1 = mean_ci([r.top1_accuracy for r in self.results])
        top5 = [r.top5_accuracy for r in self.results if r.top5_accuracy is not None]
        if top5:
            self.mean_top5, self.ci95_top5 = mean_ci(top5)
        else:
            self.mean_top5 = self.ci95_top5 = None
        self.quartiles = quartiles(self.results)

    def rolling(self, window: int | None = None):
        """(coarsity, top-1) rolling means over tasks sorted by coarsity."""
        ordered = sort_by_coarsity(self.results)
        return rolling_series(
            [r.coarsity for r in ordered], [r.top1_accuracy for r in ordered], window or self.window
        )

    def to_dict(self) -> dict:
        data = {
            "method": self.method,
            "hyperparameters": dict(self.hyperparameters),
            "ways": self.ways,
            "num_tasks": len(self.results),
            "mean_top1": self.mean_top1,
            "ci95_top1": self.ci95_top1,
            "mean_top5": self.mean_top5,
            "ci95_top5": self.ci95_top5,
            "quartiles": self.quartiles,
        }
        if self.window <= len(self.results):
            coarse, acc = self.rolling()
            rho = stats.spearmanr(coarse, acc).statistic if len(coarse) > 1 else None
            data["rolling"] = {
                "window": self.window,
                "coarsity": coarse.tolist(),
                "top1": acc.tolist(),
                "spearman": None if rho is None or np.isnan(rho) else float(rho),
            }
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def tasks_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["task_id", "coarsity", "top1", "top5"])
        for r in self.results:
            top5 = "" if r.top5_accuracy is None else repr(r.top5_accuracy)
            writer.writerow([r.task_id, repr(r.coarsity), repr(r.top1_accuracy), top5])
        return buf.getvalue()

    def rolling_csv(self) -> str:
        coarse, acc = self.rolling()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["coarsity", "top1"])
        for c, a in zip(coarse, acc):
            writer.writerow([repr(float(c)), repr(float(a))])
        return buf.getvalue()


def rolling_correlation(report: EvalReport, window: int) -> list[tuple[float, float]]:
    coarse, acc = report.rolling(window)
    return list(zip(coarse.tolist(), acc.tolist()))


def evaluate_testbed(
    store: EmbeddingStore,
    testbed: Testbed,
    classifier: ClassifierSpec | Predictor,
    window: int = DEFAULT_WINDOW,
    workers: int = 1,
) -> EvalReport:
    """Evaluate every task; ``classifier`` may be a spec or a bare predictor."""
    if isinstance(classifier, ClassifierSpec):
        predict = make_predictor(classifier)
        method, params = classifier.method, dict(classifier.hyperparameters)
    else:
        predict = classifier
        method, params = getattr(classifier, "__name__", "custom"), {}

    run: Callable[[TaskSpec], TaskResult] = lambda t: evaluate_task(store, t, predict)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, testbed.tasks))
    else:
        results = [run(t) for t in testbed.tasks]
    return EvalReport(method, params, testbed.config.ways, results, window)
