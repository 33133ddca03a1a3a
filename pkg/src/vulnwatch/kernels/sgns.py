"""Skip-gram negative-sampling SGD step over a batch of (center, context, negatives) rows.

Each row is one exact gradient step on the pair loss

    L = -log s(u_ctx . v) - sum_j log s(-u_neg_j . v)

with every gradient evaluated at the pre-step parameters of that row.
Negatives equal to the positive context are skipped.
"""

import numpy as np

from .._accel import HAVE_NUMBA, njit, resolve_backend

_CLIP = 30.0


def _sigmoid(x):
    x = np.clip(x, -_CLIP, _CLIP)
    return 1.0 / (1.0 + np.exp(-x))


def sgns_steps_numpy(W_in, W_out, centers, contexts, negs, lrs):
    for p in range(len(centers)):
        c = centers[p]
        o = contexts[p]
        row = negs[p]
        targets = np.concatenate(([o], row[row != o]))
        labels = np.zeros(len(targets))
        labels[0] = 1.0
        v = W_in[c].copy()
        U = W_out[targets]
        g = (labels - _sigmoid(U @ v)) * lrs[p]
        W_in[c] += g @ U
        np.add.at(W_out, targets, g[:, None] * v[None, :])


@njit(cache=True)
def sgns_steps_numba(W_in, W_out, centers, contexts, negs, lrs):
    dim = W_in.shape[1]
    n_neg = negs.shape[1]
    v = np.empty(dim)
    grad_v = np.empty(dim)
    g = np.empty(n_neg + 1)
    tgt = np.empty(n_neg + 1, dtype=np.int64)
    for p in range(len(centers)):
        c = centers[p]
        o = contexts[p]
        lr = lrs[p]
        nt = 0
        tgt[nt] = o
        nt += 1
        for j in range(n_neg):
            if negs[p, j] != o:
                tgt[nt] = negs[p, j]
                nt += 1
        for m in range(dim):
            v[m] = W_in[c, m]
            grad_v[m] = 0.0
        for j in range(nt):
            t = tgt[j]
            dot = 0.0
            for m in range(dim):
                dot += W_out[t, m] * v[m]
            if dot > _CLIP:
                dot = _CLIP
            elif dot < -_CLIP:
                dot = -_CLIP
            label = 1.0 if j == 0 else 0.0
            g[j] = (label - 1.0 / (1.0 + np.exp(-dot))) * lr
            for m in range(dim):
                grad_v[m] += g[j] * W_out[t, m]
        for j in range(nt):
            t = tgt[j]
            for m in range(dim):
                W_out[t, m] += g[j] * v[m]
        for m in range(dim):
            W_in[c, m] += grad_v[m]


def select(backend=None):
    if resolve_backend(backend) == "numba" and HAVE_NUMBA:
        return sgns_steps_numba
    return sgns_steps_numpy
