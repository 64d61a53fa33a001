"""Mini-batch K-means over embedding rows and the hierarchical annotate/split/label loop.

The fitter follows the per-center count scheme: each batch point pulls its
nearest centroid toward it with learning rate 1/count, which keeps every
centroid at the running mean of all points ever assigned to it. Initialization
is k-means++ on a uniform subsample of min(n, 100*k) rows. Clusters still
starved (count 0) after a batch are reseeded from the batch point farthest
from its assigned centroid.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import HistokitError, TreeError

DEFAULT_BATCH_SIZE = 1024
DEFAULT_MAX_ITERS = 100
# Spec-level defaults: 32 clusters for cohort workflows, 256 for annotation.
DEFAULT_K_COHORT = 32
DEFAULT_K_ANNOTATION = 256
_DISPLACEMENT_TOL = 1e-4  # of the bounding-box diagonal
_EMA_WEIGHT = 0.5


@dataclass(frozen=True)
class ClusterModel:
    """Fitted centroids plus training metadata."""

    k: int
    centroids: np.ndarray  # (k, d) float64
    inertia: float
    seed: int
    iterations_run: int
    batch_size: int
    checkpoint_inertias: tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "dim": self.dim,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "iterations_run": self.iterations_run,
            "inertia": self.inertia,
            "checkpoint_inertias": list(self.checkpoint_inertias),
            "centroids": [[float(v) for v in row] for row in self.centroids],
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "ClusterModel":
        return cls(
            k=int(doc["k"]),
            centroids=np.asarray(doc["centroids"], dtype=np.float64),
            inertia=float(doc["inertia"]),
            seed=int(doc["seed"]),
            iterations_run=int(doc["iterations_run"]),
            batch_size=int(doc["batch_size"]),
            checkpoint_inertias=tuple(float(v) for v in doc.get("checkpoint_inertias", [])),
        )


def _as_matrix(X) -> np.ndarray:
    values = getattr(X, "values", X)
    return np.asarray(values, dtype=np.float64)


def _sq_distances(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, one centroid at a time to keep rounding simple."""
    out = np.empty((X.shape[0], centroids.shape[0]))
    for j in range(centroids.shape[0]):
        diff = X - centroids[j]
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: sample 2+log(k) candidates per step, keep the best potential."""
    n = X.shape[0]
    n_trials = 2 + int(np.log(k)) if k > 1 else 1
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            candidates = [int(rng.integers(n))]  # all remaining mass on duplicates
        else:
            candidates = rng.choice(n, size=n_trials, p=d2 / total).tolist()
        best_idx, best_d2, best_pot = None, None, None
        for idx in candidates:
            cand_d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
            pot = cand_d2.sum()
            if best_pot is None or pot < best_pot:
                best_idx, best_d2, best_pot = idx, cand_d2, pot
        centroids[j] = X[best_idx]
        d2 = best_d2
    return centroids


def full_inertia(X, centroids: np.ndarray) -> float:
    X = _as_matrix(X)
    return float(_sq_distances(X, centroids).min(axis=1).sum())


def fit_minibatch_kmeans(
    X,
    k: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
) -> ClusterModel:
    """Fit mini-batch K-means; deterministic given (X, k, batch_size, max_iters, seed).

    Stops early once the moving average of the mean centroid displacement per
    iteration falls below 1e-4 of the data's bounding-box diagonal.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    if n == 0:
        raise HistokitError("cannot cluster an empty matrix")
    if k < 1:
        raise HistokitError(f"k must be >= 1, got {k}")
    if k > n:
        raise HistokitError(f"k={k} exceeds the {n} available rows")
    if batch_size < 1:
        raise HistokitError(f"batch_size must be >= 1, got {batch_size}")

    rng = np.random.default_rng(seed)
    sub = rng.choice(n, size=min(n, 100 * k), replace=False)
    centroids = _kmeans_pp(X[sub], k, rng)
    counts = np.zeros(k, dtype=np.int64)

    diameter = float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))
    checkpoint_every = max(1, max_iters // 8)
    checkpoints: list[float] = []
    ema = None
    iterations = 0

    for it in range(max_iters):
        iterations = it + 1
        batch_idx = rng.choice(n, size=min(batch_size, n), replace=False)
        batch = X[batch_idx]
        d2 = _sq_distances(batch, centroids)
        assigned = d2.argmin(axis=1)

        old = centroids.copy()
        batch_counts = np.bincount(assigned, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assigned, batch)
        hit = batch_counts > 0
        new_counts = counts[hit] + batch_counts[hit]
        centroids[hit] = (
            centroids[hit] * counts[hit, None] + sums[hit]
        ) / new_counts[:, None]
        counts[hit] = new_counts

        starved = np.where(counts == 0)[0]
        if starved.size:
            dist_to_assigned = d2[np.arange(len(batch)), assigned].copy()
            for c in starved:
                far = int(dist_to_assigned.argmax())
                centroids[c] = batch[far]
                counts[c] = 1
                dist_to_assigned[far] = -np.inf

        displacement = float(np.sqrt(((centroids - old) ** 2).sum(axis=1)).mean())
        ema = displacement if ema is None else _EMA_WEIGHT * ema + (1 - _EMA_WEIGHT) * displacement
        if (it + 1) % checkpoint_every == 0:
            checkpoints.append(full_inertia(X, centroids))
        if diameter > 0 and ema < _DISPLACEMENT_TOL * diameter:
            break
        if diameter == 0:
            break

    return ClusterModel(
        k=k,
        centroids=centroids,
        inertia=full_inertia(X, centroids),
        seed=seed,
        iterations_run=iterations,
        batch_size=batch_size,
        checkpoint_inertias=tuple(checkpoints),
    )


def assign(model: ClusterModel, X) -> np.ndarray:
    """Map each row to its nearest centroid; ties break toward the lowest cluster index."""
    X = _as_matrix(X)
    if X.shape[1] != model.dim:
        raise HistokitError(f"matrix dim {X.shape[1]} != centroid dim {model.dim}")
    return _sq_distances(X, model.centroids).argmin(axis=1)


@dataclass(frozen=True)
class ClusterPurity:
    cluster: int
    size: int
    labeled: int
    majority_label: str | None
    purity: float | None  # absent when the cluster has no labeled members


@dataclass(frozen=True)
class PurityReport:
    clusters: tuple[ClusterPurity, ...]
    tau: float
    coverage: float  # fraction of ALL tiles living in clusters with purity >= tau
    n_tiles: int
    n_labeled: int

    @property
    def flagged_unlabeled_clusters(self) -> tuple[int, ...]:
        return tuple(c.cluster for c in self.clusters if c.size > 0 and c.purity is None)


def cluster_purity(
    assignments: Sequence[int],
    labels: Sequence[str | None],
    tau: float = 0.9,
    k: int | None = None,
) -> PurityReport:
    """Per-cluster majority-label purity over ground-truth-labeled members.

    Unlabeled tiles never enter the purity counts but do count toward cluster
    sizes and the coverage denominator.
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    if len(assignments) != len(labels):
        raise HistokitError(
            f"{len(assignments)} assignments vs {len(labels)} labels"
        )
    n_clusters = int(assignments.max()) + 1 if assignments.size else 0
    if k is not None:
        n_clusters = max(n_clusters, k)
    counts: list[dict[str, int]] = [{} for _ in range(n_clusters)]
    sizes = np.zeros(n_clusters, dtype=np.int64)
    for a, lab in zip(assignments, labels):
        sizes[a] += 1
        if lab is not None:
            counts[a][lab] = counts[a].get(lab, 0) + 1
    clusters = []
    covered = 0
    for c in range(n_clusters):
        labeled = sum(counts[c].values())
        if labeled == 0:
            clusters.append(ClusterPurity(c, int(sizes[c]), 0, None, None))
            continue
        majority, m_count = max(counts[c].items(), key=lambda kv: (kv[1], kv[0]))
        purity = m_count / labeled
        if purity >= tau:
            covered += int(sizes[c])
        clusters.append(ClusterPurity(c, int(sizes[c]), labeled, majority, purity))
    n_tiles = int(sizes.sum())
    coverage = covered / n_tiles if n_tiles else 0.0
    return PurityReport(
        clusters=tuple(clusters),
        tau=tau,
        coverage=coverage,
        n_tiles=n_tiles,
        n_labeled=int(sum(sum(c.values()) for c in counts)),
    )


def purity_coverage_sweep(
    assignments_per_k: Mapping[int, Sequence[int]],
    labels: Sequence[str | None],
    tau: float = 0.9,
) -> dict[int, float]:
    """Coverage-at-tau for several clusterings of the same tiles."""
    coverages: dict[int, float] = {}
    for k in sorted(assignments_per_k):
        assignments = assignments_per_k[k]
        if len(assignments) != len(labels):
            raise HistokitError(
                f"clustering for k={k} covers {len(assignments)} tiles, expected {len(labels)}"
            )
        coverages[k] = cluster_purity(assignments, labels, tau=tau, k=k).coverage
    return coverages


@dataclass
class AnnotationNode:
    node_id: int
    parent_id: int | None
    member_rows: np.ndarray  # tile row indices, ascending
    label: str | None = None
    purity: float | None = None
    sub_model: ClusterModel | None = None
    children: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.member_rows.size)


class AnnotationTree:
    """Hierarchy of cluster nodes over tile rows, with labels and an audit log.

    Mutations (split, label) go through the tree object one at a time; the
    serve layer serializes writers on top of this. ``revision`` increments on
    every mutation so clients can detect concurrent edits.
    """

    def __init__(self, n_tiles: int, seed: int = 0):
        self.n_tiles = n_tiles
        self.seed = seed
        self.nodes: dict[int, AnnotationNode] = {}
        self.audit: list[dict] = []
        self.revision = 0
        self._next_id = 0

    # -- construction --------------------------------------------------

    @classmethod
    def from_assignments(cls, assignments: Sequence[int], k: int, seed: int = 0) -> "AnnotationTree":
        assignments = np.asarray(assignments, dtype=np.int64)
        tree = cls(n_tiles=int(assignments.size), seed=seed)
        for c in range(k):
            members = np.where(assignments == c)[0]
            tree._add_node(parent_id=None, member_rows=members)
        return tree

    def _add_node(self, parent_id: int | None, member_rows: np.ndarray) -> AnnotationNode:
        node = AnnotationNode(
            node_id=self._next_id,
            parent_id=parent_id,
            member_rows=np.sort(np.asarray(member_rows, dtype=np.int64)),
        )
        self.nodes[node.node_id] = node
        if parent_id is not None:
            self.nodes[parent_id].children.append(node.node_id)
        self._next_id += 1
        return node

    # -- queries ---------------------------------------------------------

    def node(self, node_id: int) -> AnnotationNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TreeError(f"unknown node {node_id}") from None

    def roots(self) -> list[AnnotationNode]:
        return [n for n in self.nodes.values() if n.parent_id is None]

    def ancestors(self, node_id: int) -> Iterable[AnnotationNode]:
        node = self.node(node_id)
        while node.parent_id is not None:
            node = self.nodes[node.parent_id]
            yield node

    def descendants(self, node_id: int) -> Iterable[AnnotationNode]:
        stack = list(self.node(node_id).children)
        while stack:
            node = self.nodes[stack.pop()]
            yield node
            stack.extend(node.children)

    def unlabeled_frontier(self) -> list[AnnotationNode]:
        """Leaf nodes of the actionable frontier: unlabeled, unsplit, no labeled ancestor."""
        out = []
        for node in self.nodes.values():
            if node.label is not None or node.children:
                continue
            if any(a.label is not None for a in self.ancestors(node.node_id)):
                continue
            out.append(node)
        return out

    # -- mutations -------------------------------------------------------

    def _record(self, action: str, node_id: int, actor: str, detail: str, timestamp: float | None):
        self.audit.append(
            {
                "timestamp": timestamp,
                "node": node_id,
                "action": action,
                "actor": actor,
                "detail": detail,
            }
        )
        self.revision += 1

    def label_node(
        self,
        node_id: int,
        label: str,
        actor: str = "user",
        timestamp: float | None = None,
    ) -> None:
        node = self.node(node_id)
        for d in self.descendants(node_id):
            if d.label is not None:
                raise TreeError(
                    f"cannot label node {node_id}: descendant {d.node_id} already labeled"
                )
        for a in self.ancestors(node_id):
            if a.label is not None:
                raise TreeError(
                    f"cannot label node {node_id}: ancestor {a.node_id} already labeled"
                )
        previous = node.label
        node.label = label
        detail = f"label={label}" if previous is None else f"label={label} (was {previous})"
        self._record("label", node_id, actor, detail, timestamp)

    def split_node(
        self,
        node_id: int,
        k_child: int,
        X,
        seed: int | None = None,
        batch_size: int = DEFAULT_BATCH_SIZE,
        max_iters: int = DEFAULT_MAX_ITERS,
        actor: str = "user",
        timestamp: float | None = None,
    ) -> list[int]:
        """Split a node by re-clustering its member rows; children partition the members."""
        node = self.node(node_id)
        if node.label is not None:
            raise TreeError(f"cannot split labeled node {node_id}")
        if node.children:
            raise TreeError(f"node {node_id} is already split")
        if k_child < 1:
            raise TreeError(f"k_child must be >= 1, got {k_child}")
        if k_child > node.size:
            raise TreeError(
                f"k_child={k_child} exceeds the {node.size} members of node {node_id}"
            )
        if seed is None:
            seed = self.seed
        X = _as_matrix(X)
        members = node.member_rows
        model = fit_minibatch_kmeans(
            X[members], k_child, batch_size=batch_size, max_iters=max_iters, seed=seed
        )
        child_assignments = assign(model, X[members])
        node.sub_model = model
        child_ids = []
        for c in range(k_child):
            child = self._add_node(node_id, members[child_assignments == c])
            child_ids.append(child.node_id)
        self._record(
            "split", node_id, actor, f"k={k_child} seed={seed} children={child_ids}", timestamp
        )
        return child_ids

    # -- sampling / export -------------------------------------------------

    def sample_tiles(self, node_id: int, m: int, seed: int = 0) -> np.ndarray:
        """Uniform sample without replacement; deterministic per (seed, node_id)."""
        node = self.node(node_id)
        if m >= node.size:
            return node.member_rows.copy()
        rng = np.random.default_rng([seed, node_id])
        return rng.choice(node.member_rows, size=m, replace=False)

    def labeled_cover(self) -> dict[int, int]:
        """Map every structural leaf to its nearest labeled ancestor-or-self (or itself)."""
        cover: dict[int, int] = {}
        for node in self.nodes.values():
            if node.children:
                continue
            covering = node.node_id if node.label is not None else None
            if covering is None:
                for a in self.ancestors(node.node_id):
                    if a.label is not None:
                        covering = a.node_id
                        break
            cover[node.node_id] = covering if covering is not None else node.node_id
        return cover

    def export_annotations(self) -> list[tuple[int, str | None, int, float | None]]:
        """Per-tile rows (tile_row, label, node_id, purity); one row per tile.

        Tiles under a labeled node inherit its label; the rest export
        unlabeled against their deepest containing node.
        """
        rows: list[tuple[int, str | None, int, float | None]] = []
        for leaf_id, cover_id in self.labeled_cover().items():
            leaf = self.nodes[leaf_id]
            covering = self.nodes[cover_id]
            for tile_row in leaf.member_rows:
                rows.append((int(tile_row), covering.label, cover_id, covering.purity))
        rows.sort(key=lambda r: r[0])
        return rows

    def recompute_purity(self, labels: Sequence[str | None]) -> None:
        for node in self.nodes.values():
            counts: dict[str, int] = {}
            for row in node.member_rows:
                lab = labels[row]
                if lab is not None:
                    counts[lab] = counts.get(lab, 0) + 1
            if counts:
                node.purity = max(counts.values()) / sum(counts.values())
            else:
                node.purity = None

    def validate(self) -> None:
        """Check the partition invariants; raises TreeError on violation."""
        all_rows = np.concatenate(
            [n.member_rows for n in self.roots()] or [np.empty(0, dtype=np.int64)]
        )
        if sorted(all_rows.tolist()) != list(range(self.n_tiles)):
            raise TreeError("root member sets do not partition the tile rows")
        for node in self.nodes.values():
            if not node.children:
                continue
            child_rows = np.concatenate(
                [self.nodes[c].member_rows for c in node.children]
            )
            if sorted(child_rows.tolist()) != sorted(node.member_rows.tolist()):
                raise TreeError(f"children of node {node.node_id} do not partition it")
            if node.label is not None:
                for d in self.descendants(node.node_id):
                    if d.label is not None:
                        raise TreeError(
                            f"labeled node {node.node_id} has labeled descendant {d.node_id}"
                        )

    # -- persistence -------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "version": 1,
            "n_tiles": self.n_tiles,
            "seed": self.seed,
            "revision": self.revision,
            "next_id": self._next_id,
            "nodes": [
                {
                    "id": n.node_id,
                    "parent_id": n.parent_id,
                    "members": [int(r) for r in n.member_rows],
                    "label": n.label,
                    "purity": n.purity,
                    "sub_model": n.sub_model.to_json_dict() if n.sub_model else None,
                    "children": list(n.children),
                }
                for n in self.nodes.values()
            ],
            "audit": self.audit,
        }

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "AnnotationTree":
        tree = cls(n_tiles=int(doc["n_tiles"]), seed=int(doc.get("seed", 0)))
        tree.revision = int(doc.get("revision", 0))
        tree._next_id = int(doc["next_id"])
        tree.audit = list(doc.get("audit", []))
        for nd in doc["nodes"]:
            node = AnnotationNode(
                node_id=int(nd["id"]),
                parent_id=nd["parent_id"],
                member_rows=np.asarray(nd["members"], dtype=np.int64),
                label=nd.get("label"),
                purity=nd.get("purity"),
                sub_model=(
                    ClusterModel.from_json_dict(nd["sub_model"]) if nd.get("sub_model") else None
                ),
                children=list(nd.get("children", [])),
            )
            tree.nodes[node.node_id] = node
        return tree

    def save(self, path: str | Path) -> None:
        """Atomic write: temp file in the target directory, then rename."""
        path = Path(path)
        payload = json.dumps(self.to_json_dict(), indent=None, separators=(",", ":"))
        fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | Path) -> "AnnotationTree":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))
