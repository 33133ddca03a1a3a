import numpy as np
import pytest
import scipy.sparse as sp

from vulnwatch._accel import HAVE_NUMBA, default_backend, resolve_backend
from vulnwatch.clustering import kmeans_fit
from vulnwatch.kernels.kmeans import KMeansKernels

pytestmark = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


def test_env_flag(monkeypatch):
    monkeypatch.setenv("VULNWATCH_NUMBA", "0")
    assert default_backend() == "numpy" and resolve_backend() == "numpy"
    monkeypatch.setenv("VULNWATCH_NUMBA", "1")
    assert default_backend() == "numba"
    assert resolve_backend("numpy") == "numpy"
    with pytest.raises(ValueError):
        resolve_backend("cuda")


@pytest.mark.parametrize("sparse", [False, True])
def test_assign_and_sums_agree(sparse):
    rng = np.random.default_rng(0)
    X = rng.random((200, 30))
    X[X < 0.7] = 0.0
    C = rng.random((6, 30))
    Xin = sp.csr_matrix(X) if sparse else X
    a, b = KMeansKernels("numpy"), KMeansKernels("numba")
    la, da = a.assign(Xin, C)
    lb, db = b.assign(Xin, C)
    assert np.array_equal(la, lb) and np.allclose(da, db, atol=1e-9)
    sa, ca = a.centroid_sums(Xin, la, 6)
    sb, cb = b.centroid_sums(Xin, la, 6)
    assert np.array_equal(ca, cb) and np.allclose(sa, sb, atol=1e-12)


def test_assign_ties_lowest_index():
    X = np.array([[0.0, 0.0]])
    C = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    for name in ("numpy", "numba"):
        assert KMeansKernels(name).assign(X, C)[0].tolist() == [0]


def test_fit_agrees_across_backends():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(c, 1.0, size=(50, 4)) for c in (0, 8, 16)])
    a = kmeans_fit(X, 3, seed=1, backend="numpy")
    b = kmeans_fit(X, 3, seed=1, backend="numba")
    assert np.array_equal(a.labels, b.labels) and a.sse == pytest.approx(b.sse, rel=1e-12)
