"""k-means inner loops: nearest-centroid assignment and centroid sums.

Every kernel exists as ``*_numba`` (compiled loops) and ``*_numpy``
(vectorized). Ties in assignment go to the lowest centroid index.
"""

import numpy as np
import scipy.sparse as sp

from .._accel import HAVE_NUMBA, njit, resolve_backend

_CHUNK = 4096


def assign_dense_numpy(X, C):
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    mind2 = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _CHUNK):
        diff = X[lo:lo + _CHUNK, None, :] - C[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        lab = np.argmin(d2, axis=1)
        labels[lo:lo + _CHUNK] = lab
        mind2[lo:lo + _CHUNK] = d2[np.arange(len(lab)), lab]
    return labels, mind2


def assign_csr_numpy(data, indices, indptr, C):
    n = len(indptr) - 1
    X = sp.csr_matrix((data, indices, indptr), shape=(n, C.shape[1]))
    xnorm = np.asarray(X.multiply(X).sum(axis=1)).ravel()
    cnorm = np.einsum("ij,ij->i", C, C)
    d2 = xnorm[:, None] - 2.0 * np.asarray(X @ C.T) + cnorm[None, :]
    np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1).astype(np.int64)
    return labels, d2[np.arange(n), labels]


def centroid_sums_dense_numpy(X, labels, k):
    sums = np.zeros((k, X.shape[1]))
    for j in range(k):
        members = labels == j
        if members.any():
            sums[j] = X[members].sum(axis=0)
    return sums, np.bincount(labels, minlength=k).astype(np.int64)


def centroid_sums_csr_numpy(data, indices, indptr, labels, k, d):
    n = len(indptr) - 1
    X = sp.csr_matrix((data, indices, indptr), shape=(n, d))
    onehot = sp.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(k, n))
    sums = np.asarray((onehot @ X).todense())
    return sums, np.bincount(labels, minlength=k).astype(np.int64)


@njit(cache=True)
def assign_dense_numba(X, C):
    n, d = X.shape
    k = C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    mind2 = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = np.inf
        arg = 0
        for j in range(k):
            s = 0.0
            for m in range(d):
                t = X[i, m] - C[j, m]
                s += t * t
            if s < best:
                best = s
                arg = j
        labels[i] = arg
        mind2[i] = best
    return labels, mind2


@njit(cache=True)
def assign_csr_numba(data, indices, indptr, C):
    n = len(indptr) - 1
    k, d = C.shape
    cnorm = np.zeros(k)
    for j in range(k):
        s = 0.0
        for m in range(d):
            s += C[j, m] * C[j, m]
        cnorm[j] = s
    labels = np.empty(n, dtype=np.int64)
    mind2 = np.empty(n, dtype=np.float64)
    for i in range(n):
        xn = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            xn += data[p] * data[p]
        best = np.inf
        arg = 0
        for j in range(k):
            dot = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                dot += data[p] * C[j, indices[p]]
            s = xn - 2.0 * dot + cnorm[j]
            if s < 0.0:
                s = 0.0
            if s < best:
                best = s
                arg = j
        labels[i] = arg
        mind2[i] = best
    return labels, mind2


@njit(cache=True)
def centroid_sums_dense_numba(X, labels, k):
    n, d = X.shape
    sums = np.zeros((k, d))
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        j = labels[i]
        counts[j] += 1
        for m in range(d):
            sums[j, m] += X[i, m]
    return sums, counts


@njit(cache=True)
def centroid_sums_csr_numba(data, indices, indptr, labels, k, d):
    n = len(indptr) - 1
    sums = np.zeros((k, d))
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        j = labels[i]
        counts[j] += 1
        for p in range(indptr[i], indptr[i + 1]):
            sums[j, indices[p]] += data[p]
    return sums, counts


class KMeansKernels:
    """Backend-bound kernel set operating on either a dense array or CSR matrix."""

    def __init__(self, backend=None):
        self.backend = resolve_backend(backend)
        numba_ok = self.backend == "numba" and HAVE_NUMBA
        self._assign_dense = assign_dense_numba if numba_ok else assign_dense_numpy
        self._assign_csr = assign_csr_numba if numba_ok else assign_csr_numpy
        self._sums_dense = centroid_sums_dense_numba if numba_ok else centroid_sums_dense_numpy
        self._sums_csr = centroid_sums_csr_numba if numba_ok else centroid_sums_csr_numpy

    def assign(self, X, C):
        C = np.ascontiguousarray(C, dtype=np.float64)
        if sp.issparse(X):
            return self._assign_csr(X.data, X.indices, X.indptr, C)
        return self._assign_dense(X, C)

    def centroid_sums(self, X, labels, k):
        if sp.issparse(X):
            return self._sums_csr(X.data, X.indices, X.indptr, labels, k, X.shape[1])
        return self._sums_dense(X, labels, k)
