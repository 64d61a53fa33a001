import numpy as np
import pytest

from histokit.errors import HistokitError, MetricError
from histokit.knn import (
    auroc,
    build_index,
    predict_knn,
    repeated_eval,
    subsampling_index_builder,
)


def bruteforce_knn_scores(reference, labels, queries, k, metric):
    """Plain-python oracle: sort by (distance, index), average labels of first k."""
    def norm(v):
        n = np.sqrt(sum(x * x for x in v))
        return v / n if n else v

    if metric == "cosine":
        reference = [norm(r) for r in reference]
        queries = [norm(q) for q in queries]
    scores = []
    for q in queries:
        dists = []
        for i, r in enumerate(reference):
            if metric == "cosine":
                d = 1.0 - float(np.dot(q, r))
            else:
                d = float(((q - r) ** 2).sum())
            dists.append((d, i))
        dists.sort()
        top = [labels[i] for _, i in dists[:k]]
        scores.append(sum(top) / k)
    return np.asarray(scores)


def pair_counting_auroc(scores, labels):
    wins = ties = pairs = 0
    for i in range(len(scores)):
        if labels[i] != 1:
            continue
        for j in range(len(scores)):
            if labels[j] != 0:
                continue
            pairs += 1
            if scores[i] > scores[j]:
                wins += 1
            elif scores[i] == scores[j]:
                ties += 1
    return (wins + 0.5 * ties) / pairs


def test_query_equal_to_reference_all_positive():
    ref = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    index = build_index(ref, [1, 1, 1])
    scores = predict_knn(index, ref[:1], k=2)
    assert scores[0] == 1.0


def test_k3_two_of_three_positive():
    rng = np.random.default_rng(0)
    ref = rng.normal(size=(10, 4))
    labels = np.zeros(10, dtype=int)
    q = rng.normal(size=(1, 4))
    oracle = bruteforce_knn_scores(ref, labels, q, 3, "euclidean")
    # plant labels on the oracle's top-3: two positives, one negative
    dists = sorted((float(((q[0] - r) ** 2).sum()), i) for i, r in enumerate(ref))
    top3 = [i for _, i in dists[:3]]
    labels[top3[0]] = 1
    labels[top3[1]] = 1
    index = build_index(ref, labels, metric="euclidean")
    assert predict_knn(index, q, k=3)[0] == pytest.approx(2 / 3)
    assert bruteforce_knn_scores(ref, labels, q, 3, "euclidean")[0] == pytest.approx(2 / 3)


@pytest.mark.parametrize("metric", ["cosine", "euclidean"])
def test_knn_matches_bruteforce_oracle(metric):
    rng = np.random.default_rng(7)
    ref = rng.normal(size=(300, 8))
    labels = rng.integers(0, 2, size=300)
    queries = rng.normal(size=(40, 8))
    index = build_index(ref, labels, metric=metric)
    got = predict_knn(index, queries, k=20)
    oracle = bruteforce_knn_scores(ref, labels, queries, 20, metric)
    assert np.array_equal(got, oracle)


def test_knn_tie_at_boundary_prefers_lower_index():
    # three references at identical distance from the query; k=2 must take rows 0 and 1
    ref = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    labels = np.array([1, 0, 1, 1])
    index = build_index(ref, labels, metric="euclidean")
    q = np.array([[1.0, 0.0]])
    assert predict_knn(index, q, k=2)[0] == pytest.approx(0.5)


def test_knn_scores_on_grid():
    rng = np.random.default_rng(3)
    ref = rng.normal(size=(50, 5))
    labels = rng.integers(0, 2, size=50)
    index = build_index(ref, labels)
    scores = predict_knn(index, rng.normal(size=(30, 5)), k=7)
    grid = np.arange(8) / 7
    assert all(min(abs(s - g) for g in grid) < 1e-12 for s in scores)


def test_knn_errors():
    index = build_index(np.zeros((3, 2)), [0, 1, 0])
    with pytest.raises(HistokitError):
        predict_knn(index, np.zeros((1, 2)), k=4)
    with pytest.raises(HistokitError):
        predict_knn(index, np.zeros((1, 3)), k=2)
    with pytest.raises(HistokitError):
        build_index(np.zeros((2, 2)), [0, 2])


def test_auroc_perfect_separation():
    assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_auroc_all_tied():
    assert auroc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5


def test_auroc_with_tie_is_11_12():
    assert auroc([0.9, 0.6, 0.4, 0.2, 0.6], [1, 1, 0, 0, 0]) == pytest.approx(11 / 12, abs=1e-15)


def test_auroc_matches_pair_counting_oracle():
    rng = np.random.default_rng(11)
    for trial in range(100):
        n = int(rng.integers(4, 40))
        # quantized scores so ties actually occur
        scores = rng.integers(0, 6, size=n) / 5.0
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        assert abs(auroc(scores, labels) - pair_counting_auroc(scores, labels)) <= 1e-12


def test_auroc_monotone_transform_invariance():
    rng = np.random.default_rng(5)
    scores = rng.normal(size=60)
    labels = rng.integers(0, 2, size=60)
    labels[0], labels[1] = 0, 1
    base = auroc(scores, labels)
    assert auroc(np.exp(scores), labels) == base
    assert auroc(3 * scores + 7, labels) == base


def test_auroc_complement_identity():
    rng = np.random.default_rng(6)
    scores = rng.integers(0, 4, size=50) / 3.0
    labels = rng.integers(0, 2, size=50)
    labels[:2] = [0, 1]
    assert auroc(scores, labels) + auroc(scores, 1 - labels) == 1.0


def test_auroc_single_class_rejected():
    with pytest.raises(MetricError):
        auroc([0.1, 0.2], [1, 1])


def test_repeated_eval_single_run_zero_std():
    rng = np.random.default_rng(0)
    ref, labels = rng.normal(size=(40, 3)), rng.integers(0, 2, size=40)
    labels[:2] = [0, 1]
    queries, qlabels = rng.normal(size=(20, 3)), rng.integers(0, 2, size=20)
    qlabels[:2] = [0, 1]
    builder = subsampling_index_builder(ref, labels, fraction=1.0)
    summary = repeated_eval(builder, queries, qlabels, k=5, runs=1, seed=0)
    assert summary.auroc_std == 0.0
    assert len(summary.auroc_runs) == 1


def test_repeated_eval_identical_subsamples_equal():
    rng = np.random.default_rng(1)
    ref, labels = rng.normal(size=(40, 3)), rng.integers(0, 2, size=40)
    labels[:2] = [0, 1]
    queries, qlabels = rng.normal(size=(20, 3)), rng.integers(0, 2, size=20)
    qlabels[:2] = [0, 1]
    builder = subsampling_index_builder(ref, labels, fraction=1.0)
    summary = repeated_eval(builder, queries, qlabels, k=5, runs=5, seed=3)
    assert len(set(summary.auroc_runs)) == 1
    assert summary.auroc_std == 0.0


def test_repeated_eval_separable_close_to_single_run_oracle():
    rng = np.random.default_rng(2)
    pos = rng.normal(loc=4.0, size=(100, 4))
    neg = rng.normal(loc=-4.0, size=(100, 4))
    ref = np.vstack([pos, neg])
    labels = np.array([1] * 100 + [0] * 100)
    queries = np.vstack([rng.normal(loc=4.0, size=(30, 4)), rng.normal(loc=-4.0, size=(30, 4))])
    qlabels = np.array([1] * 30 + [0] * 30)
    builder = subsampling_index_builder(ref, labels, fraction=0.8)
    summary = repeated_eval(builder, queries, qlabels, k=10, runs=5, seed=4)
    single = auroc(predict_knn(build_index(ref, labels), queries, k=10), qlabels)
    assert abs(summary.auroc_mean - single) < 0.01
    assert summary.auroc_mean > 0.99


def test_repeated_eval_deterministic():
    rng = np.random.default_rng(9)
    ref, labels = rng.normal(size=(60, 3)), rng.integers(0, 2, size=60)
    labels[:2] = [0, 1]
    queries, qlabels = rng.normal(size=(25, 3)), rng.integers(0, 2, size=25)
    qlabels[:2] = [0, 1]
    builder = subsampling_index_builder(ref, labels, fraction=0.7)
    a = repeated_eval(builder, queries, qlabels, k=5, runs=4, seed=8)
    b = repeated_eval(builder, queries, qlabels, k=5, runs=4, seed=8)
    assert a == b
