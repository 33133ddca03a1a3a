"""Seeded k-means (k-means++ init, Lloyd iterations), SSE curves and elbow selection."""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .kernels.kmeans import KMeansKernels


class KMeansError(ValueError):
    pass


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    labels: np.ndarray
    sse: float
    seed: int
    iterations: int
    sse_history: list = field(default_factory=list)

    @property
    def assignments(self):
        return self.labels

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def as_matrix(vectors):
    """Coerce input into a float64 C-contiguous array or canonical CSR matrix."""
    if sp.issparse(vectors):
        X = sp.csr_matrix(vectors, dtype=np.float64)
        X.sum_duplicates()
        X.sort_indices()
        return X
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise KMeansError(f"expected a 2-D collection of vectors, got shape {X.shape}")
    return np.ascontiguousarray(X)


def count_distinct(X) -> int:
    if sp.issparse(X):
        X = X.copy()
        X.eliminate_zeros()
        rows = {
            (X.indices[X.indptr[i]:X.indptr[i + 1]].tobytes(), X.data[X.indptr[i]:X.indptr[i + 1]].tobytes())
            for i in range(X.shape[0])
        }
        return len(rows)
    if X.shape[0] == 0:
        return 0
    # +0.0 folds -0.0 into 0.0 so equal vectors compare equal bytewise
    return len(np.unique(X + 0.0, axis=0))


def _row(X, i):
    if sp.issparse(X):
        return X[i].toarray().ravel()
    return X[i].copy()


def kmeans_plusplus(X, k, rng, kernels, n_trials=None):
    """Greedy k-means++ seeding: each step samples ``n_trials`` candidates
    proportional to squared distance and keeps the one lowering potential most."""
    n = X.shape[0]
    if n_trials is None:
        n_trials = 2 + int(math.log(k))
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = _row(X, first)
    _, closest = kernels.assign(X, centers[:1])
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            raise KMeansError("fewer distinct points than clusters")
        cum = np.cumsum(closest)
        picks = np.searchsorted(cum, rng.random(n_trials) * cum[-1], side="right")
        picks = np.minimum(picks, n - 1)
        best_pot, best_d2, best_idx = np.inf, None, -1
        for idx in picks:
            if closest[idx] <= 0.0:
                continue
            _, d2 = kernels.assign(X, _row(X, idx)[None, :])
            cand = np.minimum(closest, d2)
            pot = cand.sum()
            if pot < best_pot:
                best_pot, best_d2, best_idx = pot, cand, int(idx)
        if best_idx < 0:
            # all sampled candidates coincide with chosen centers; fall back to the farthest point
            best_idx = int(np.argmax(closest))
            _, d2 = kernels.assign(X, _row(X, best_idx)[None, :])
            best_d2 = np.minimum(closest, d2)
        centers[c] = _row(X, best_idx)
        closest = best_d2
    return centers


def kmeans_fit(vectors, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-4, backend=None) -> ClusterModel:
    """Cluster ``vectors`` (dense rows or a sparse matrix) into ``k`` groups.

    Lloyd iterations stop when assignments stop changing, the largest
    centroid displacement drops below ``tol``, or ``max_iter`` is hit. An
    emptied cluster is re-seeded at the point farthest from its centroid.
    The returned assignments always refer to the returned centroids.
    """
    X = as_matrix(vectors)
    if k < 1:
        raise KMeansError("k must be a positive integer")
    if max_iter < 1:
        raise KMeansError("max_iter must be positive")
    if tol < 0:
        raise KMeansError("tol must be non-negative")
    distinct = count_distinct(X)
    if k > distinct:
        raise KMeansError(f"k={k} exceeds the number of distinct points ({distinct})")
    kernels = KMeansKernels(backend)
    rng = np.random.default_rng(seed)

    C = kmeans_plusplus(X, k, rng, kernels)
    labels, d2 = kernels.assign(X, C)
    history = [float(d2.sum())]
    iterations = 0
    for _ in range(max_iter):
        sums, counts = kernels.centroid_sums(X, labels, k)
        newC = C.copy()
        nonempty = counts > 0
        newC[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            far = np.argsort(-d2, kind="stable")
            for j, idx in zip(empty, far):
                newC[j] = _row(X, idx)
        shift = float(np.sqrt(((newC - C) ** 2).sum(axis=1)).max())
        C = newC
        new_labels, d2 = kernels.assign(X, C)
        history.append(float(d2.sum()))
        iterations += 1
        unchanged = np.array_equal(new_labels, labels)
        labels = new_labels
        if unchanged or shift < tol:
            break
    return ClusterModel(k, C, labels, history[-1], seed, iterations, history)


def recompute_sse(vectors, centroids, labels) -> float:
    X = as_matrix(vectors)
    if sp.issparse(X):
        X = X.toarray()
    diff = X - np.asarray(centroids)[labels]
    return float(math.fsum((diff * diff).ravel()))


def sse_curve(vectors, k_values, seed: int = 0, **kw) -> list:
    ks = list(k_values)
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise KMeansError("k_values must be strictly ascending")
    X = as_matrix(vectors)
    return [(k, kmeans_fit(X, k, seed=seed, **kw).sse) for k in ks]


def elbow_select(curve) -> int:
    """Interior k with the largest second difference of the SSE curve (ties: smallest k)."""
    pts = list(curve)
    if len(pts) < 3:
        raise KMeansError("elbow selection needs at least 3 (k, sse) points")
    ks = [int(k) for k, _ in pts]
    if any(b != a + 1 for a, b in zip(ks, ks[1:])):
        raise KMeansError("elbow selection needs consecutive k values")
    sse = [float(s) for _, s in pts]
    best_k, best = None, -math.inf
    for i in range(1, len(pts) - 1):
        second = (sse[i - 1] - sse[i]) - (sse[i] - sse[i + 1])
        if second > best:
            best, best_k = second, ks[i]
    return best_k
