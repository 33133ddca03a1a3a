"""Skip-gram word embeddings and topic clusters over tweet embeddings."""

import logging
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from ._accel import resolve_backend
from .clustering import KMeansError, count_distinct, elbow_select, kmeans_fit, sse_curve
from .features import TokenizedDoc, tokenize
from .kernels import sgns

log = logging.getLogger(__name__)

MIN_LEARNING_RATE = 1e-4
_POSITIONS_PER_CHUNK = 20_000


@lru_cache(maxsize=None)
def stopwords() -> frozenset:
    """The shipped English stopword list (``data/stopwords.txt``)."""
    text = resources.files("vulnwatch").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


@dataclass(frozen=True)
class EmbeddingHyperparams:
    dim: int = 100
    window: int = 5
    negative_samples: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_count: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "window", "negative_samples", "epochs", "min_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class EmbeddingModel:
    vocab: list
    counts: np.ndarray
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    hyperparams: EmbeddingHyperparams
    backend: str = "numpy"

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.vocab)}

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def __contains__(self, term):
        return term in self.index

    def vector(self, term: str) -> np.ndarray:
        return self.input_vectors[self.index[term]]

    def save(self, path) -> None:
        """Write input vectors as ``dim=<d> vocab=<n>`` then ``term v1 .. vd`` lines."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"dim={self.dim} vocab={len(self.vocab)}\n")
            for term, vec in zip(self.vocab, self.input_vectors):
                fh.write(term + " " + " ".join(repr(float(x)) for x in vec) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        """Load a saved model. Output vectors and counts are not stored and come back zeroed."""
        with open(path, encoding="utf-8") as fh:
            header = dict(part.split("=") for part in fh.readline().split())
            dim, n = int(header["dim"]), int(header["vocab"])
            vocab, rows = [], []
            for line in fh:
                parts = line.rstrip("\n").split(" ")
                if len(parts) != dim + 1:
                    raise ValueError(f"{path}: expected {dim} values for {parts[0]!r}")
                vocab.append(parts[0])
                rows.append([float(x) for x in parts[1:]])
        if len(vocab) != n:
            raise ValueError(f"{path}: header says {n} terms, found {len(vocab)}")
        W = np.array(rows, dtype=np.float64).reshape(n, dim)
        return cls(vocab, np.zeros(n, dtype=np.int64), W, np.zeros_like(W), EmbeddingHyperparams(dim=dim))


def pair_loss_and_grad(v, u_pos, u_negs):
    """Negative-sampling loss of one (center, context) pair and its gradients.

    Returns ``(loss, d/dv, d/du_pos, d/du_negs)`` with
    ``loss = -log s(u_pos.v) - sum log s(-u_neg.v)``.
    """
    v = np.asarray(v, dtype=np.float64)
    u_pos = np.asarray(u_pos, dtype=np.float64)
    u_negs = np.atleast_2d(np.asarray(u_negs, dtype=np.float64))
    sp_ = u_pos @ v
    sn = u_negs @ v
    loss = np.logaddexp(0.0, -sp_) + np.logaddexp(0.0, sn).sum()
    sig_p = 1.0 / (1.0 + np.exp(-sp_))
    sig_n = 1.0 / (1.0 + np.exp(-sn))
    grad_v = (sig_p - 1.0) * u_pos + sig_n @ u_negs
    grad_pos = (sig_p - 1.0) * v
    grad_negs = sig_n[:, None] * v[None, :]
    return float(loss), grad_v, grad_pos, grad_negs


def build_vocab(docs: Sequence[TokenizedDoc], min_count: int):
    counts = Counter(t for d in docs for t in d.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return kept, np.array([counts[t] for t in kept], dtype=np.int64)


def _encode(docs, index):
    ids, starts = [], []
    for d in docs:
        enc = [index[t] for t in d.tokens if t in index]
        if len(enc) < 2:
            continue
        starts.append(len(ids))
        ids.extend(enc)
    tokens = np.array(ids, dtype=np.int64)
    doc_start = np.zeros(len(tokens), dtype=np.int64)
    doc_end = np.zeros(len(tokens), dtype=np.int64)
    bounds = starts + [len(ids)]
    for a, b in zip(bounds, bounds[1:]):
        doc_start[a:b] = a
        doc_end[a:b] = b
    return tokens, doc_start, doc_end


def _pairs(tokens, doc_start, doc_end, lo, hi, window):
    """(center, context) index pairs for center positions [lo, hi), in corpus order."""
    pos = np.arange(lo, hi)
    offsets = np.concatenate((np.arange(-window, 0), np.arange(1, window + 1)))
    cand = pos[:, None] + offsets[None, :]
    ok = (cand >= doc_start[pos][:, None]) & (cand < doc_end[pos][:, None])
    centers = np.broadcast_to(pos[:, None], cand.shape)[ok]
    return tokens[centers], tokens[cand[ok]]


def _count_pairs(doc_start, doc_end, window):
    pos = np.arange(len(doc_start))
    left = np.minimum(pos - doc_start, window)
    right = np.minimum(doc_end - 1 - pos, window)
    return int((left + right).sum())


def train_word2vec(docs: Sequence[TokenizedDoc], hp: Optional[EmbeddingHyperparams] = None, backend=None) -> EmbeddingModel:
    """Skip-gram with negative sampling.

    Negatives come from the unigram distribution raised to 0.75; the step size
    decays linearly from ``hp.learning_rate`` to 1e-4 over all pairs of all
    epochs. All randomness is drawn from ``numpy.random.default_rng(hp.seed)``
    outside the kernels, so both backends consume identical samples.
    """
    hp = hp or EmbeddingHyperparams()
    vocab, counts = build_vocab(docs, hp.min_count)
    if not vocab:
        raise ValueError("empty vocabulary after min_count pruning")
    index = {t: i for i, t in enumerate(vocab)}
    rng = np.random.default_rng(hp.seed)
    V = len(vocab)
    W_in = (rng.random((V, hp.dim)) - 0.5) / hp.dim
    W_out = np.zeros((V, hp.dim))

    tokens, doc_start, doc_end = _encode(docs, index)
    noise = counts.astype(np.float64) ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0
    per_epoch = _count_pairs(doc_start, doc_end, hp.window)
    total = per_epoch * hp.epochs
    step = sgns.select(backend)

    done = 0
    for epoch in range(hp.epochs):
        for lo in range(0, len(tokens), _POSITIONS_PER_CHUNK):
            hi = min(lo + _POSITIONS_PER_CHUNK, len(tokens))
            centers, contexts = _pairs(tokens, doc_start, doc_end, lo, hi, hp.window)
            m = len(centers)
            if m == 0:
                continue
            negs = np.searchsorted(noise_cdf, rng.random((m, hp.negative_samples)), side="right")
            negs = np.minimum(negs, V - 1).astype(np.int64)
            progress = (done + np.arange(m)) / max(total, 1)
            lrs = hp.learning_rate - (hp.learning_rate - MIN_LEARNING_RATE) * progress
            step(W_in, W_out, centers, contexts, negs, lrs)
            done += m
        if not (np.isfinite(W_in).all() and np.isfinite(W_out).all()):
            raise FloatingPointError(f"non-finite embedding weights after epoch {epoch + 1}")
    return EmbeddingModel(vocab, counts, W_in, W_out, hp, resolve_backend(backend))


def cosine_similarity(model: EmbeddingModel, a: str, b: str) -> float:
    va, vb = model.vector(a), model.vector(b)
    return float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))


def embed_tweet(model: EmbeddingModel, doc: TokenizedDoc):
    """Mean input vector of the in-vocabulary tokens.

    Returns ``(vector, embedded)``; ``embedded`` is False (and the vector zero)
    when no token is in the vocabulary.
    """
    rows = [model.index[t] for t in doc.tokens if t in model.index]
    if not rows:
        return np.zeros(model.dim), False
    return model.input_vectors[rows].mean(axis=0), True


@dataclass(frozen=True)
class TopicCluster:
    id: int
    tweet_count: int
    keywords: tuple

    def to_dict(self) -> dict:
        d = asdict(self)
        d["keywords"] = list(self.keywords)
        return d

    @classmethod
    def from_dict(cls, d) -> "TopicCluster":
        return cls(int(d["id"]), int(d["tweet_count"]), tuple(d["keywords"]))


def top_keywords(docs: Sequence[TokenizedDoc], n: int = 3, exclude=()) -> tuple:
    """``n`` most frequent non-stopword tokens, ties broken lexicographically."""
    stop = stopwords()
    skip = {e.lower() for e in exclude}
    counts = Counter(t for d in docs for t in d.tokens if t not in stop and t not in skip)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return tuple(t for t, _ in ranked[:n])


@dataclass
class TopicResult:
    clusters: list
    labels: np.ndarray
    kept: list
    k: int
    curve: Optional[list] = None


def cluster_topics(
    docs: Sequence[TokenizedDoc],
    model: EmbeddingModel,
    k="10",
    seed: int = 0,
    k_scan: Sequence[int] = range(2, 16),
    unique: bool = False,
    exclude=(),
    backend=None,
) -> TopicResult:
    """Embed, drop unembeddable docs, cluster, and describe each cluster."""
    if unique:
        seen, uniq = set(), []
        for d in docs:
            if d.tokens not in seen:
                seen.add(d.tokens)
                uniq.append(d)
        docs = uniq
    vecs, kept = [], []
    for d in docs:
        v, ok = embed_tweet(model, d)
        if ok:
            vecs.append(v)
            kept.append(d)
    X = np.array(vecs).reshape(len(vecs), model.dim)
    curve = None
    if str(k) == "auto":
        limit = count_distinct(X)
        ks = [kk for kk in k_scan if kk <= limit]
        if len(ks) < 3:
            raise KMeansError("too few embeddable tweets for an elbow scan")
        curve = sse_curve(X, ks, seed=seed, backend=backend)
        k = elbow_select(curve)
    k = int(k)
    if len(kept) < k:
        raise KMeansError(f"{len(kept)} embeddable tweets is fewer than k={k}")
    fit = kmeans_fit(X, k, seed=seed, backend=backend)
    clusters = []
    for j in range(k):
        members = [kept[i] for i in np.flatnonzero(fit.labels == j)]
        clusters.append(TopicCluster(j, len(members), top_keywords(members, exclude=exclude)))
    return TopicResult(clusters, fit.labels, kept, k, curve)


def mine_topics(tweets, model: EmbeddingModel, k="10", seed: int = 0, **kw) -> list:
    docs = [tokenize(t.text, t.id) for t in tweets]
    return cluster_topics(docs, model, k=k, seed=seed, **kw).clusters


def cluster_words(model: EmbeddingModel, k: int, seed: int = 0, backend=None) -> list:
    """Cluster the word vectors themselves; returns per-cluster term lists ordered by frequency."""
    norms = np.linalg.norm(model.input_vectors, axis=1, keepdims=True)
    X = model.input_vectors / np.where(norms > 0, norms, 1.0)
    fit = kmeans_fit(X, k, seed=seed, backend=backend)
    return [[model.vocab[i] for i in np.flatnonzero(fit.labels == j)] for j in range(k)]

