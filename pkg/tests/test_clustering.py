import numpy as np
import pytest
from helpers import adjusted_rand_index, lloyd, make_blobs, nearest_centroid_bruteforce

from histokit.clustering import (
    AnnotationTree,
    ClusterModel,
    _kmeans_pp,
    assign,
    cluster_purity,
    fit_minibatch_kmeans,
    full_inertia,
    purity_coverage_sweep,
)
from histokit.errors import HistokitError, TreeError


def blobs_300x8():
    centers = np.zeros((3, 8))
    centers[1, 0] = 10.0
    centers[2, 1] = 10.0
    return make_blobs(100, centers, scale=1.0, seed=42)


def test_k_equals_n_rows_zero_inertia():
    X = np.arange(12, dtype=float).reshape(6, 2)
    model = fit_minibatch_kmeans(X, k=6, batch_size=6, max_iters=20, seed=0)
    assert model.inertia == pytest.approx(0.0, abs=1e-12)
    assigned = assign(model, X)
    assert sorted(assigned.tolist()) == list(range(6))


def test_k1_centroid_is_mean():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 5))
    model = fit_minibatch_kmeans(X, k=1, batch_size=200, max_iters=50, seed=0)
    assert np.allclose(model.centroids[0], X.mean(axis=0), atol=1e-5)


def test_three_blobs_match_planted_and_lloyd_oracle():
    X, truth = blobs_300x8()
    model = fit_minibatch_kmeans(X, k=3, batch_size=128, max_iters=100, seed=7)
    got = assign(model, X)
    assert adjusted_rand_index(got, truth) >= 0.99

    # oracle: full-batch Lloyd from the identical k-means++ init
    rng = np.random.default_rng(7)
    sub = rng.choice(len(X), size=min(len(X), 100 * 3), replace=False)
    init = _kmeans_pp(X[sub], 3, rng)
    _, oracle_assign = lloyd(X, init)
    assert adjusted_rand_index(oracle_assign, truth) >= 0.99
    assert adjusted_rand_index(got, oracle_assign) >= 0.99


def test_fit_is_deterministic():
    X, _ = blobs_300x8()
    a = fit_minibatch_kmeans(X, k=4, batch_size=64, max_iters=40, seed=11)
    b = fit_minibatch_kmeans(X, k=4, batch_size=64, max_iters=40, seed=11)
    assert np.array_equal(a.centroids, b.centroids)
    assert a.inertia == b.inertia
    assert a.iterations_run == b.iterations_run


def test_checkpoint_inertia_non_increasing_once_rates_decay():
    X, _ = blobs_300x8()
    model = fit_minibatch_kmeans(X, k=3, batch_size=64, max_iters=240, seed=5)
    ck = model.checkpoint_inertias
    assert len(ck) >= 4
    late = ck[len(ck) // 2 :]
    for a, b in zip(late, late[1:]):
        assert b <= a * (1 + 1e-6)


def test_fit_errors():
    X = np.zeros((3, 2))
    with pytest.raises(HistokitError):
        fit_minibatch_kmeans(X, k=4)
    with pytest.raises(HistokitError):
        fit_minibatch_kmeans(np.zeros((0, 2)), k=1)
    with pytest.raises(HistokitError):
        fit_minibatch_kmeans(X, k=0)


def test_assign_exact_match_and_ties():
    centroids = np.array([[0.0, 0.0], [5.0, 0.0], [2.0, 2.0], [0.0, 4.0]])
    model = ClusterModel(
        k=4, centroids=centroids, inertia=0.0, seed=0, iterations_run=0, batch_size=1
    )
    assert assign(model, np.array([[2.0, 2.0]]))[0] == 2
    # (0, 2) is equidistant to centroids 0 and 3 -> lowest index wins
    assert assign(model, np.array([[0.0, 2.0]]))[0] == 0


def test_assign_matches_bruteforce_oracle():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(100, 6))
    centroids = rng.normal(size=(7, 6))
    model = ClusterModel(
        k=7, centroids=centroids, inertia=0.0, seed=0, iterations_run=0, batch_size=1
    )
    assert np.array_equal(assign(model, X), nearest_centroid_bruteforce(X, centroids))


def test_assign_dim_mismatch():
    model = ClusterModel(
        k=1, centroids=np.zeros((1, 3)), inertia=0.0, seed=0, iterations_run=0, batch_size=1
    )
    with pytest.raises(HistokitError):
        assign(model, np.zeros((2, 2)))


def test_cluster_purity_basic():
    assignments = [0] * 10
    labels = ["cancer"] * 9 + ["benign"]
    report = cluster_purity(assignments, labels)
    assert report.clusters[0].purity == pytest.approx(0.9)
    assert report.clusters[0].majority_label == "cancer"


def test_cluster_purity_single_label():
    report = cluster_purity([0, 0, 0], ["stroma"] * 3)
    assert report.clusters[0].purity == 1.0


def test_coverage_half():
    assignments = [0] * 10 + [1] * 10
    labels = (["a"] * 19 + ["b"]) [:10] + (["a"] * 6 + ["b"] * 4)
    # cluster 0: 10 labeled 'a' with 1 'b'? construct explicitly instead:
    labels = ["a"] * 9 + ["b"] + ["a"] * 6 + ["b"] * 4  # purities 0.9 and 0.6
    report = cluster_purity(assignments, labels, tau=0.9)
    assert report.clusters[0].purity == pytest.approx(0.9)
    assert report.clusters[1].purity == pytest.approx(0.6)
    assert report.coverage == pytest.approx(0.5)


def test_purity_zero_labeled_flagged():
    report = cluster_purity([0, 0, 1, 1], ["a", "a", None, None])
    assert report.clusters[1].purity is None
    assert report.flagged_unlabeled_clusters == (1,)


def test_purity_invariant_under_permutation():
    rng = np.random.default_rng(4)
    assignments = rng.integers(0, 4, size=200)
    labels = [["x", "y", "z"][i] for i in rng.integers(0, 3, size=200)]
    base = cluster_purity(assignments, labels)
    perm = rng.permutation(200)
    permuted = cluster_purity(assignments[perm], [labels[i] for i in perm])
    for a, b in zip(base.clusters, permuted.clusters):
        assert a.purity == b.purity and a.size == b.size
    assert base.coverage == permuted.coverage


def test_coverage_at_tau_zero_is_one_when_fully_labeled():
    report = cluster_purity([0, 1, 0, 1], ["a", "b", "b", "a"], tau=0.0)
    assert report.coverage == 1.0


def test_sweep_k1_mixed_zero_coverage():
    labels = ["a"] * 6 + ["b"] * 4
    coverages = purity_coverage_sweep({1: [0] * 10}, labels, tau=0.9)
    assert coverages[1] == 0.0


def test_sweep_separable_full_coverage():
    X, truth = make_blobs(50, [[0.0, 0.0], [20.0, 0.0]], scale=1.0, seed=1)
    labels = ["pos" if t else "neg" for t in truth]
    model = fit_minibatch_kmeans(X, k=2, batch_size=50, max_iters=60, seed=2)
    coverages = purity_coverage_sweep({2: assign(model, X)}, labels, tau=0.9)
    assert coverages[2] == 1.0


def test_sweep_non_decreasing_in_k():
    X, truth = make_blobs(150, [[0.0] * 6, [12.0] + [0.0] * 5], scale=1.0, seed=3)
    labels = ["pos" if t else "neg" for t in truth]
    per_k = {}
    for k in (2, 8, 32):
        model = fit_minibatch_kmeans(X, k=k, batch_size=128, max_iters=80, seed=k)
        per_k[k] = assign(model, X)
    coverages = purity_coverage_sweep(per_k, labels, tau=0.9)
    values = [coverages[k] for k in (2, 8, 32)]
    assert values == sorted(values)


def test_sweep_mismatched_tiles_rejected():
    with pytest.raises(HistokitError):
        purity_coverage_sweep({1: [0, 0], 2: [0, 1, 1]}, ["a", "b"])


# -- annotation tree ------------------------------------------------------


def small_tree(n=100, k=4, seed=0):
    rng = np.random.default_rng(seed)
    assignments = rng.integers(0, k, size=n)
    return AnnotationTree.from_assignments(assignments, k=k, seed=seed), assignments


def test_split_partitions_members():
    X, _ = make_blobs(25, [[0.0, 0.0], [8.0, 8.0], [16.0, 0.0], [0.0, 16.0]], seed=5)
    tree = AnnotationTree.from_assignments(np.zeros(100, dtype=int), k=1)
    children = tree.split_node(0, k_child=4, X=X, seed=1)
    assert len(children) == 4
    got = np.sort(np.concatenate([tree.node(c).member_rows for c in children]))
    assert np.array_equal(got, np.arange(100))
    tree.validate()


def test_split_labeled_node_rejected():
    tree, _ = small_tree()
    tree.label_node(0, "cancer")
    with pytest.raises(TreeError):
        tree.split_node(0, k_child=2, X=np.zeros((100, 2)))


def test_split_k_exceeding_members_rejected():
    tree = AnnotationTree.from_assignments(np.zeros(3, dtype=int), k=1)
    with pytest.raises(TreeError):
        tree.split_node(0, k_child=4, X=np.zeros((3, 2)))


def test_split_separates_planted_subblobs():
    X, truth = make_blobs(60, [[0.0, 0.0, 0.0], [15.0, 0.0, 0.0]], scale=1.0, seed=6)
    tree = AnnotationTree.from_assignments(np.zeros(120, dtype=int), k=1)
    children = tree.split_node(0, k_child=2, X=X, seed=3)
    child_of = np.empty(120, dtype=int)
    for c in children:
        child_of[tree.node(c).member_rows] = c
    assert adjusted_rand_index(child_of, truth) >= 0.99


def test_sample_all_members_when_m_large():
    tree, _ = small_tree()
    node = tree.node(1)
    out = tree.sample_tiles(1, m=node.size + 50, seed=0)
    assert np.array_equal(out, node.member_rows)


def test_sample_deterministic():
    tree = AnnotationTree.from_assignments(np.zeros(1000, dtype=int), k=1)
    a = tree.sample_tiles(0, m=8, seed=123)
    b = tree.sample_tiles(0, m=8, seed=123)
    assert np.array_equal(a, b)
    assert len(a) == 8
    c = tree.sample_tiles(0, m=8, seed=124)
    assert not np.array_equal(a, c)


def test_sample_frequency_uniform_within_3_sigma():
    n_members, m, draws = 40, 8, 10000
    tree = AnnotationTree.from_assignments(np.zeros(n_members, dtype=int), k=1)
    counts = np.zeros(n_members)
    for s in range(draws):
        counts[tree.sample_tiles(0, m=m, seed=s)] += 1
    p = m / n_members
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) <= 3 * sigma)


def test_label_and_export():
    tree = AnnotationTree.from_assignments(np.array([0, 0, 1, 1, 1]), k=2)
    tree.label_node(0, "cancer")
    tree.label_node(1, "benign")
    rows = tree.export_annotations()
    assert [r[1] for r in rows] == ["cancer", "cancer", "benign", "benign", "benign"]
    assert len(rows) == 5


def test_relabel_overwrites_and_audits():
    tree, _ = small_tree()
    tree.label_node(2, "cancer")
    tree.label_node(2, "benign")
    assert tree.node(2).label == "benign"
    actions = [(e["action"], e["node"]) for e in tree.audit]
    assert actions == [("label", 2), ("label", 2)]
    assert "was cancer" in tree.audit[-1]["detail"]


def test_label_ancestor_of_labeled_node_rejected():
    X = np.random.default_rng(0).normal(size=(100, 2))
    tree = AnnotationTree.from_assignments(np.zeros(100, dtype=int), k=1)
    children = tree.split_node(0, k_child=2, X=X, seed=0)
    tree.label_node(children[0], "stroma")
    with pytest.raises(TreeError):
        tree.label_node(0, "cancer")
    # and labeling under a labeled ancestor is equally blocked
    tree2 = AnnotationTree.from_assignments(np.zeros(100, dtype=int), k=1)
    kids = tree2.split_node(0, k_child=2, X=X, seed=0)
    tree2.label_node(0, "cancer")
    with pytest.raises(TreeError):
        tree2.label_node(kids[0], "stroma")


def test_export_unlabeled_branch():
    tree = AnnotationTree.from_assignments(np.array([0, 0, 1, 1]), k=2)
    tree.label_node(0, "cancer")
    rows = tree.export_annotations()
    assert [r[1] for r in rows] == ["cancer", "cancer", None, None]
    assert rows[2][2] == 1  # unlabeled tiles point at their own node


def test_export_accuracy_equals_purity_weighted_mean():
    rng = np.random.default_rng(8)
    truth = np.array(["a", "b"])[rng.integers(0, 2, size=400)]
    assignments = rng.integers(0, 6, size=400)
    tree = AnnotationTree.from_assignments(assignments, k=6)
    tree.recompute_purity(list(truth))
    # label each cluster by its majority
    expected_acc = 0.0
    for c in range(6):
        members = np.where(assignments == c)[0]
        values, counts = np.unique(truth[members], return_counts=True)
        majority = values[counts.argmax()]
        tree.label_node(c, str(majority))
        expected_acc += counts.max()
    expected_acc /= 400
    rows = tree.export_annotations()
    acc = np.mean([rows[i][1] == truth[i] for i in range(400)])
    assert acc == pytest.approx(expected_acc, abs=1e-12)


def test_frontier_concat_covers_root_exactly_once():
    X = np.random.default_rng(1).normal(size=(200, 3))
    tree = AnnotationTree.from_assignments(np.random.default_rng(2).integers(0, 4, 200), k=4)
    kids = tree.split_node(1, k_child=3, X=X, seed=1)
    tree.label_node(kids[0], "x")
    tree.label_node(2, "y")
    rows = tree.export_annotations()
    assert sorted(r[0] for r in rows) == list(range(200))


def test_tree_json_round_trip(tmp_path):
    X = np.random.default_rng(1).normal(size=(50, 2))
    tree = AnnotationTree.from_assignments(np.random.default_rng(3).integers(0, 3, 50), k=3)
    tree.split_node(0, k_child=2, X=X, seed=4)
    tree.label_node(1, "cancer")
    path = tmp_path / "tree.json"
    tree.save(path)
    back = AnnotationTree.load(path)
    assert back.n_tiles == tree.n_tiles
    assert back.revision == tree.revision
    assert set(back.nodes) == set(tree.nodes)
    for nid, node in tree.nodes.items():
        other = back.nodes[nid]
        assert np.array_equal(node.member_rows, other.member_rows)
        assert node.label == other.label
        assert node.children == other.children
    assert back.export_annotations() == tree.export_annotations()
