"""Offline ranking metrics per task and lifts between two models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .events import ALL_TASKS, TaskId

METRICS = ("ndcg", "map", "recip_rank", "recall", "pairwise_accuracy", "hits")
REPORT_HEADER = "task,metric,value,n_requests,n_skipped"
LIFT_HEADER = REPORT_HEADER + ",lift_pct"


class EvaluationError(ValueError):
    pass


@dataclass
class Feed:
    """A served feed: candidates in ranked order with their five binary labels."""

    request_id: str
    pin_ids: list[str]
    labels: np.ndarray  # (n_candidates, 5)
    scores: Optional[np.ndarray] = None
    probabilities: Optional[np.ndarray] = None


@dataclass
class MetricValue:
    value: Optional[float]
    n_requests: int
    n_skipped: int


@dataclass
class EvalResult:
    k: int
    n_requests: int
    metrics: dict[TaskId, dict[str, MetricValue]] = field(default_factory=dict)

    def value(self, task: TaskId, metric: str) -> Optional[float]:
        return self.metrics[task][metric].value


def _dcg(rels: np.ndarray) -> float:
    return float(np.sum(rels / np.log2(np.arange(2, rels.size + 2))))


def request_metrics(rel: np.ndarray, k: int) -> dict[str, Optional[float]]:
    """Metrics of one ranked binary relevance list; None where undefined."""
    rel = np.asarray(rel, dtype=float)
    top = rel[:k]
    n_pos = int(rel.sum())
    out: dict[str, Optional[float]] = {"hits": 1.0 if top.any() else 0.0}
    if n_pos == 0:
        out.update(ndcg=None, map=None, recip_rank=None, recall=None, pairwise_accuracy=None)
        return out
    ideal = np.sort(rel)[::-1][:k]
    out["ndcg"] = _dcg(top) / _dcg(ideal)
    hits_so_far = np.cumsum(top)
    precisions = hits_so_far / np.arange(1, top.size + 1)
    out["map"] = float(np.sum(precisions * top) / min(k, n_pos))
    first = np.flatnonzero(top)
    out["recip_rank"] = 1.0 / (first[0] + 1) if first.size else 0.0
    out["recall"] = min(1.0, float(top.sum()) / n_pos)
    n_neg = rel.size - n_pos
    if n_neg == 0:
        out["pairwise_accuracy"] = None
    else:
        # Count (positive, negative) pairs where the positive is ranked first.
        negs_below = np.cumsum(rel[::-1] == 0)[::-1]
        out["pairwise_accuracy"] = float(np.sum(negs_below[rel == 1])) / (n_pos * n_neg)
    return out


def eval_feed(feeds: Sequence[Feed], k: int = 3, tasks: Sequence[TaskId] = ALL_TASKS) -> EvalResult:
    if k < 1:
        raise EvaluationError("k must be >= 1")
    feeds = [f for f in feeds if len(f.pin_ids) > 0]
    if not feeds:
        raise EvaluationError("no feeds to evaluate")
    result = EvalResult(k=k, n_requests=len(feeds))
    for task in tasks:
        j = ALL_TASKS.index(task)
        sums = {m: 0.0 for m in METRICS}
        counts = {m: 0 for m in METRICS}
        for feed in feeds:
            for m, v in request_metrics(feed.labels[:, j], k).items():
                if v is not None:
                    sums[m] += v
                    counts[m] += 1
        result.metrics[task] = {
            m: MetricValue(sums[m] / counts[m] if counts[m] else None, counts[m], len(feeds) - counts[m])
            for m in METRICS
        }
    return result


def lift(a: EvalResult, b: EvalResult) -> dict[TaskId, dict[str, Optional[float]]]:
    """Percentage lift of ``a`` over ``b``; None where ``b`` is zero or undefined."""
    if a.k != b.k:
        raise EvaluationError(f"k mismatch: {a.k} vs {b.k}")
    if set(a.metrics) != set(b.metrics):
        raise EvaluationError("task sets differ")
    out: dict[TaskId, dict[str, Optional[float]]] = {}
    for task in a.metrics:
        out[task] = {}
        for m in METRICS:
            va, vb = a.metrics[task][m].value, b.metrics[task][m].value
            if va is None or vb is None or vb == 0:
                out[task][m] = None
            else:
                out[task][m] = 100.0 * (va - vb) / vb
    return out


def _fmt(x: Optional[float]) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.9g}"


def write_report(path, result: EvalResult) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(REPORT_HEADER + "\n")
        for task, metrics in result.metrics.items():
            for m, mv in metrics.items():
                fh.write(f"{task.value},{m}@{result.k},{_fmt(mv.value)},{mv.n_requests},{mv.n_skipped}\n")


def write_lift_report(path, a: EvalResult, b: EvalResult) -> None:
    lifts = lift(a, b)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(LIFT_HEADER + "\n")
        for task in a.metrics:
            for m in METRICS:
                pct = lifts[task][m]
                mv = a.metrics[task][m]
                fh.write(f"{task.value},{m}@{a.k},{_fmt(mv.value)},{mv.n_requests},{mv.n_skipped},"
                         f"{'undefined' if pct is None else _fmt(pct)}\n")


def build_feeds(dataset, params, utilities=None) -> list[Feed]:
    """Score every row with ``params`` and rank candidates within each request."""
    from .ranker import forward, score_matrix

    u = params.utilities if utilities is None else utilities
    probs = forward(params, dataset.features) if len(dataset) else np.zeros((0, len(ALL_TASKS)))
    scores = score_matrix(probs, u)
    groups: dict[str, list[int]] = {}
    for i, req in enumerate(dataset.request_ids):
        groups.setdefault(req, []).append(i)
    feeds = []
    for req in sorted(groups):
        idx = sorted(groups[req], key=lambda i: (-scores[i], dataset.pin_ids[i]))
        feeds.append(Feed(req, [dataset.pin_ids[i] for i in idx],
                          np.asarray(dataset.labels[idx], dtype=int), scores[idx], probs[idx]))
    return feeds
