import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuroauth.classifiers import KnnSpec, train_knn
from neuroauth.errors import ConfigError, DataError


def brute_force(x, y, q, k, metric):
    """Sort every (distance, index) pair and vote; ties go to the smallest label."""
    out = []
    for row in q:
        diff = x - row
        dist = np.sqrt((diff ** 2).sum(1)) if metric == "euclidean" else np.abs(diff).sum(1)
        order = sorted(range(len(x)), key=lambda i: (dist[i], i))[:k]
        labels, counts = np.unique(y[order], return_counts=True)
        out.append(labels[np.flatnonzero(counts == counts.max())[0]])
    return np.array(out)


def test_one_neighbour_example():
    model = train_knn(np.array([[0.0], [10.0]]), np.array([0, 1]), KnnSpec(1))
    assert model.predict(np.array([[2.0], [9.0]])).tolist() == [0, 1]


def test_vote_tie_goes_to_smallest_label():
    x = np.array([[0.0], [1.0], [-1.0], [2.0], [50.0]])
    y = np.array([7, 3, 7, 3, 3])
    model = train_knn(x, y, KnnSpec(4))
    assert model.predict(np.array([[0.5]]))[0] == 3


def test_distance_tie_goes_to_lower_index():
    x = np.array([[1.0], [-1.0]])
    assert train_knn(x, np.array([5, 2]), KnnSpec(1)).predict([[0.0]])[0] == 5
    assert train_knn(x[::-1], np.array([2, 5]), KnnSpec(1)).predict([[0.0]])[0] == 2


def test_metrics_can_disagree():
    # Searched small integer grids for a query whose nearest neighbour
    # differs between the two metrics.
    found = None
    pts = [np.array(p, dtype=float) for p in itertools.product(range(-3, 4), repeat=2)]
    for a, b in itertools.combinations(pts, 2):
        x = np.vstack([a, b])
        q = np.zeros((1, 2))
        e = brute_force(x, np.array([0, 1]), q, 1, "euclidean")[0]
        m = brute_force(x, np.array([0, 1]), q, 1, "manhattan")[0]
        if e != m:
            found = (x, e, m)
            break
    assert found is not None
    x, e, m = found
    y = np.array([0, 1])
    assert train_knn(x, y, KnnSpec(1, "euclidean")).predict(np.zeros((1, 2)))[0] == e
    assert train_knn(x, y, KnnSpec(1, "manhattan")).predict(np.zeros((1, 2)))[0] == m


@pytest.mark.parametrize("k,metric", [(4, "euclidean"), (5, "manhattan"), (6, "euclidean")])
def test_matches_brute_force(k, metric):
    gen = np.random.default_rng(k)
    x = gen.integers(-4, 5, (60, 3)).astype(float)
    y = gen.integers(0, 3, 60)
    q = gen.integers(-4, 5, (80, 3)).astype(float)
    got = train_knn(x, y, KnnSpec(k, metric)).predict(q)
    assert np.array_equal(got, brute_force(x, y, q, k, metric))


def test_matches_reference_on_tie_free_data():
    from sklearn.neighbors import KNeighborsClassifier

    gen = np.random.default_rng(9)
    x = gen.normal(size=(200, 4))
    y = gen.integers(0, 2, 200)
    q = gen.normal(size=(300, 4))
    for metric in ("euclidean", "manhattan"):
        ref = KNeighborsClassifier(5, metric=metric, algorithm="brute").fit(x, y).predict(q)
        assert np.array_equal(train_knn(x, y, KnnSpec(5, metric)).predict(q), ref)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_row_order_irrelevant_without_ties(seed):
    gen = np.random.default_rng(seed)
    x = gen.normal(size=(30, 3))
    y = gen.integers(0, 2, 30)
    q = gen.normal(size=(10, 3))
    perm = gen.permutation(30)
    a = train_knn(x, y, KnnSpec(5)).predict(q)
    b = train_knn(x[perm], y[perm], KnnSpec(5)).predict(q)
    assert np.array_equal(a, b)


def test_errors():
    with pytest.raises(ConfigError):
        KnnSpec(0)
    with pytest.raises(ConfigError):
        KnnSpec(3, "cosine")
    with pytest.raises(DataError):
        train_knn(np.zeros((3, 2)), np.zeros(3), KnnSpec(4))


def test_cluster_example():
    x = np.array([[0.0, 0.0]] * 3 + [[1.0, 1.0]] * 3)
    y = np.array([0, 0, 0, 1, 1, 1])
    assert train_knn(x, y, KnnSpec(3)).predict(np.array([[0.1, 0.0]]))[0] == 0
