import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from vulnwatch.clustering import KMeansError, elbow_select, kmeans_fit, recompute_sse, sse_curve

FOUR = [(0, 0), (0, 1), (10, 10), (10, 11)]


def brute_force_partition(points, k):
    """Exhaustive search over all labelings for the SSE-minimal partition."""
    pts = np.asarray(points, float)
    best = (np.inf, None)
    for labels in itertools.product(range(k), repeat=len(pts)):
        labels = np.array(labels)
        if len(set(labels)) != k:
            continue
        sse = sum(((pts[labels == j] - pts[labels == j].mean(0)) ** 2).sum() for j in range(k))
        if sse < best[0] - 1e-12:
            best = (sse, labels)
    return best


def partition(labels):
    groups = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return sorted(sorted(g) for g in groups.values())


def test_four_points_matches_brute_force(backend):
    sse, labels = brute_force_partition(FOUR, 2)
    assert sse == pytest.approx(1.0)
    m = kmeans_fit(FOUR, 2, seed=0, backend=backend)
    assert partition(m.labels) == partition(labels) == [[0, 1], [2, 3]]
    assert m.sse == pytest.approx(1.0, rel=1e-12)


def test_k1_is_mean(backend):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 3))
    m = kmeans_fit(X, 1, backend=backend)
    assert np.allclose(m.centroids[0], X.mean(0))
    assert m.sse == pytest.approx(((X - X.mean(0)) ** 2).sum(), rel=1e-9)


def test_k_equals_distinct_points(backend):
    m = kmeans_fit(FOUR, 4, backend=backend)
    assert m.sse == 0.0
    assert sorted(m.labels.tolist()) == [0, 1, 2, 3]


def test_sparse_input_matches_dense(backend):
    rng = np.random.default_rng(5)
    X = rng.random((60, 12)) * (rng.random((60, 12)) < 0.3)
    a = kmeans_fit(X, 3, seed=2, backend=backend)
    b = kmeans_fit(sp.csr_matrix(X), 3, seed=2, backend=backend)
    assert partition(a.labels) == partition(b.labels)
    assert a.sse == pytest.approx(b.sse, rel=1e-9)


def test_errors():
    with pytest.raises(KMeansError):
        kmeans_fit(FOUR, 0)
    with pytest.raises(KMeansError):
        kmeans_fit(FOUR, 5)
    with pytest.raises(KMeansError):
        kmeans_fit([(0, 0), (0, 0), (1, 1)], 3)
    with pytest.raises((KMeansError, ValueError)):
        kmeans_fit([[0, 0], [1]], 1)


def test_empty_cluster_reseeded(backend):
    # duplicated mass pulls both initial centers into one clump; every cluster must end non-empty
    X = np.array([[0.0, 0.0]] * 20 + [[0.1, 0.0]] * 20 + [[50.0, 50.0]])
    for seed in range(10):
        m = kmeans_fit(X, 3, seed=seed, backend=backend)
        assert (m.sizes() > 0).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(1, 4), st.integers(1, 5), st.integers(0, 10_000))
def test_invariants_random(n, d, k, seed):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(n, d)), 2)
    if k > len(np.unique(X, axis=0)):
        return
    m = kmeans_fit(X, k, seed=seed)
    hist = np.array(m.sse_history)
    assert np.all(hist[1:] <= hist[:-1] * (1 + 1e-12) + 1e-12)
    assert m.sse == pytest.approx(recompute_sse(X, m.centroids, m.labels), rel=1e-6, abs=1e-9)
    d2 = ((X[:, None, :] - m.centroids[None]) ** 2).sum(-1)
    assert np.all(d2[np.arange(n), m.labels] <= d2.min(1) + 1e-9)
    assert m.labels.min() >= 0 and m.labels.max() < k


def test_tie_goes_to_lowest_index(backend):
    from vulnwatch.kernels.kmeans import KMeansKernels

    kern = KMeansKernels(backend)
    X = np.array([[0.0, 0.0], [1.0, 0.0]])
    C = np.array([[0.5, 1.0], [0.5, -1.0]])
    labels, _ = kern.assign(X, C)
    assert labels.tolist() == [0, 0]
    labels, _ = kern.assign(sp.csr_matrix(X), C)
    assert labels.tolist() == [0, 0]


def test_determinism(backend):
    X = np.random.default_rng(0).normal(size=(200, 5))
    a = kmeans_fit(X, 6, seed=11, backend=backend)
    b = kmeans_fit(X, 6, seed=11, backend=backend)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.centroids, b.centroids)


def test_sse_curve_examples():
    curve = sse_curve(FOUR, [1, 2, 4], seed=0)
    assert [k for k, _ in curve] == [1, 2, 4]
    s = [v for _, v in curve]
    assert s[0] > s[1] > s[2] == 0.0
    X = np.asarray(FOUR, float)
    assert s[0] == pytest.approx(((X - X.mean(0)) ** 2).sum())
    assert sse_curve([(3, 3)] * 4, [1])[0][1] == 0.0
    assert len(sse_curve(FOUR, [2])) == 1
    with pytest.raises(KMeansError):
        sse_curve(FOUR, [2, 1])


@pytest.mark.parametrize(
    "sse, expected",
    [
        ((100, 80, 30, 28, 27), 3),
        ((100, 90, 80, 70, 60), 2),
        ((100, 40, 20, 18, 17), 2),
    ],
)
def test_elbow_examples(sse, expected):
    assert elbow_select(list(zip(range(1, 6), sse))) == expected


def test_elbow_errors():
    with pytest.raises(KMeansError):
        elbow_select([(1, 3.0), (2, 1.0)])
    with pytest.raises(KMeansError):
        elbow_select([(1, 3.0), (2, 1.0), (4, 0.5)])
