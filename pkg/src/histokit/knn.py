"""Training-free evaluation: exact K-nearest-neighbour scoring and AUROC.

Neighbour search is an exact scan (no approximate index); the scores are the
unweighted fraction of positive labels among the k nearest references.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import HistokitError, MetricError

DEFAULT_K = 20
METRICS = ("cosine", "euclidean")


def _l2_normalize(X: np.ndarray) -> np.ndarray:
    norms = np.sqrt((X * X).sum(axis=1, keepdims=True))
    norms[norms == 0] = 1.0  # zero vectors stay zero, distance 1 to everything
    return X / norms


@dataclass(frozen=True)
class KnnIndex:
    """Immutable reference set with binary labels."""

    reference: np.ndarray  # (n, d) float64; L2-normalized rows when metric == cosine
    labels: np.ndarray  # (n,) int in {0, 1}
    metric: str = "cosine"


def build_index(reference, labels, metric: str = "cosine") -> KnnIndex:
    reference = np.asarray(getattr(reference, "values", reference), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if metric not in METRICS:
        raise HistokitError(f"unknown metric {metric!r}, expected one of {METRICS}")
    if reference.shape[0] != labels.shape[0]:
        raise HistokitError(
            f"{reference.shape[0]} reference rows vs {labels.shape[0]} labels"
        )
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise HistokitError("reference labels must be binary 0/1")
    if metric == "cosine":
        reference = _l2_normalize(reference)
    return KnnIndex(reference=reference, labels=labels, metric=metric)


def _distances(index: KnnIndex, queries: np.ndarray) -> np.ndarray:
    if index.metric == "cosine":
        q = _l2_normalize(queries)
        return 1.0 - q @ index.reference.T
    out = np.empty((queries.shape[0], index.reference.shape[0]))
    for j in range(index.reference.shape[0]):
        diff = queries - index.reference[j]
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def predict_knn(index: KnnIndex, queries, k: int = DEFAULT_K) -> np.ndarray:
    """Score queries as the fraction of positives among the k nearest references.

    Distance ties at the k-th boundary break toward the lower reference row
    index (stable sort on distance).
    """
    queries = np.asarray(getattr(queries, "values", queries), dtype=np.float64)
    n_ref = index.reference.shape[0]
    if k < 1 or k > n_ref:
        raise HistokitError(f"k={k} must be in [1, {n_ref}]")
    if queries.shape[1] != index.reference.shape[1]:
        raise HistokitError(
            f"query dim {queries.shape[1]} != reference dim {index.reference.shape[1]}"
        )
    dist = _distances(index, queries)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return index.labels[order].mean(axis=1)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with midrank tie handling."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise MetricError(f"{scores.shape} scores vs {labels.shape} labels")
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise MetricError("AUROC undefined: need at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1  # midrank, 1-based
        i = j
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - pos * (pos + 1) / 2) / (pos * neg)


@dataclass(frozen=True)
class EvalSummary:
    k: int
    runs: int
    auroc_runs: tuple[float, ...]
    auroc_mean: float
    auroc_std: float  # sample standard deviation; 0 when runs == 1

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "runs": self.runs,
            "auroc_mean": self.auroc_mean,
            "auroc_std": self.auroc_std,
            "auroc_runs": list(self.auroc_runs),
        }


def repeated_eval(
    index_builder: Callable[[np.random.Generator], KnnIndex],
    queries,
    query_labels,
    k: int = DEFAULT_K,
    runs: int = 5,
    seed: int = 0,
) -> EvalSummary:
    """Repeat KNN + AUROC with run-specific reference subsampling seeds.

    ``index_builder`` receives a per-run generator (derived from ``(seed, run)``)
    and returns the KnnIndex to score against.
    """
    if runs < 1:
        raise HistokitError(f"runs must be >= 1, got {runs}")
    values = []
    for r in range(runs):
        rng = np.random.default_rng([seed, r])
        index = index_builder(rng)
        scores = predict_knn(index, queries, k=k)
        values.append(auroc(scores, query_labels))
    values_arr = np.asarray(values)
    std = float(values_arr.std(ddof=1)) if runs > 1 else 0.0
    return EvalSummary(
        k=k,
        runs=runs,
        auroc_runs=tuple(float(v) for v in values),
        auroc_mean=float(values_arr.mean()),
        auroc_std=std,
    )


def subsampling_index_builder(
    reference, labels, fraction: float = 0.8, metric: str = "cosine"
) -> Callable[[np.random.Generator], KnnIndex]:
    """Builder that draws a label-stratified subsample of the reference set per run."""
    reference = np.asarray(getattr(reference, "values", reference), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not 0 < fraction <= 1:
        raise HistokitError(f"subsample fraction must be in (0, 1], got {fraction}")

    def build(rng: np.random.Generator) -> KnnIndex:
        if fraction >= 1.0:
            return build_index(reference, labels, metric=metric)
        keep: list[np.ndarray] = []
        for value in (0, 1):
            idx = np.where(labels == value)[0]
            take = max(1, int(round(fraction * len(idx)))) if len(idx) else 0
            if take:
                keep.append(rng.choice(idx, size=take, replace=False))
        chosen = np.sort(np.concatenate(keep))
        return build_index(reference[chosen], labels[chosen], metric=metric)

    return build
