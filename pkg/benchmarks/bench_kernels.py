"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel runs once untimed so numba compilation stays out of the numbers.
Both backends are checked to agree before anything is timed.
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp

from vulnwatch._accel import HAVE_NUMBA
from vulnwatch.clustering import kmeans_fit
from vulnwatch.kernels import sgns
from vulnwatch.kernels.kmeans import KMeansKernels


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    dense = rng.normal(size=(20_000, 50))
    sparse = sp.random(20_000, 5_000, density=0.002, format="csr", random_state=1)
    C_dense = rng.normal(size=(10, 50))
    C_sparse = rng.random((10, 5_000)) * 0.01
    labels = rng.integers(0, 10, 20_000)

    def sgns_case(name):
        W_in = rng.uniform(-0.005, 0.005, size=(2_000, 100))
        W_out = np.zeros_like(W_in)
        n = 20_000
        centers, contexts = rng.integers(0, 2_000, n), rng.integers(0, 2_000, n)
        negs, lrs = rng.integers(0, 2_000, (n, 5)), np.linspace(0.025, 1e-4, n)
        step = sgns.select(name)
        return lambda: step(W_in.copy(), W_out.copy(), centers, contexts, negs, lrs)

    for name in ("numpy", "numba"):
        k = KMeansKernels(name)
        yield name, "assign dense 20000x50, k=10", lambda k=k: k.assign(dense, C_dense)
        yield name, "assign csr 20000x5000, k=10", lambda k=k: k.assign(sparse, C_sparse)
        yield name, "centroid sums dense", lambda k=k: k.centroid_sums(dense, labels, 10)
        yield name, "centroid sums csr", lambda k=k: k.centroid_sums(sparse, labels, 10)
        yield name, "kmeans_fit dense k=10", lambda name=name: kmeans_fit(dense, 10, seed=0, max_iter=20, backend=name)
        yield name, "sgns 20000 pairs, dim 100", sgns_case(name)


def check_agreement(rng):
    X = rng.normal(size=(500, 8))
    a = kmeans_fit(X, 5, seed=3, backend="numpy")
    b = kmeans_fit(X, 5, seed=3, backend="numba")
    assert np.array_equal(a.labels, b.labels), "k-means backends disagree"
    W = rng.normal(size=(50, 10))
    args = (rng.integers(0, 50, 300), rng.integers(0, 50, 300), rng.integers(0, 50, (300, 5)), np.full(300, 0.01))
    A_in, A_out, B_in, B_out = W.copy(), W.copy(), W.copy(), W.copy()
    sgns.select("numpy")(A_in, A_out, *args)
    sgns.select("numba")(B_in, B_out, *args)
    assert np.allclose(A_in, B_in) and np.allclose(A_out, B_out), "sgns backends disagree"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    check_agreement(rng)
    results = {}
    for name, label, fn in cases(rng):
        results.setdefault(label, {})[name] = best_of(fn, args.repeat)
    print(f"{'kernel':34s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    for label, r in results.items():
        print(f"{label:34s} {r['numpy']:10.4f} {r['numba']:10.4f} {r['numpy'] / r['numba']:7.1f}x")


if __name__ == "__main__":
    main()
