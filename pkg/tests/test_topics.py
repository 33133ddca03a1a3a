import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vulnwatch.clustering import KMeansError
from vulnwatch.features import TokenizedDoc, tokenize
from vulnwatch.kernels import sgns
from vulnwatch.topics import (
    EmbeddingHyperparams,
    EmbeddingModel,
    TopicCluster,
    build_vocab,
    cluster_topics,
    cluster_words,
    cosine_similarity,
    embed_tweet,
    mine_topics,
    pair_loss_and_grad,
    stopwords,
    top_keywords,
    train_word2vec,
)

from conftest import cooccurrence_docs, make_tweets


def numeric_grad(f, x, eps=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        v, up, un = rng.normal(size=10), rng.normal(size=10), rng.normal(size=(5, 10))
        _, gv, gp, gn = pair_loss_and_grad(v, up, un)
        f = lambda: pair_loss_and_grad(v, up, un)[0]
        worst = max(worst, rel_err(gv, numeric_grad(f, v)), rel_err(gp, numeric_grad(f, up)), rel_err(gn, numeric_grad(f, un)))
    assert worst < 1e-4


def test_loss_value_hand_case():
    # s(0) = 1/2 for both terms, so loss = 2 ln 2
    loss, gv, gp, gn = pair_loss_and_grad(np.zeros(3), np.ones(3), np.ones((1, 3)))
    assert loss == pytest.approx(2 * np.log(2))
    assert np.allclose(gv, 0.0) and np.allclose(gp, 0.0) and np.allclose(gn, 0.0)


@pytest.mark.parametrize("name", ["numpy", "numba"])
def test_kernel_step_is_gradient_step(name):
    rng = np.random.default_rng(3)
    W_in, W_out = rng.normal(size=(8, 6)), rng.normal(size=(8, 6))
    c, o, negs, lr = 1, 2, np.array([4, 5, 2, 7]), 0.05
    distinct = [n for n in negs if n != o]
    _, gv, gp, gn = pair_loss_and_grad(W_in[c], W_out[o], W_out[distinct])
    exp_in, exp_out = W_in.copy(), W_out.copy()
    exp_in[c] -= lr * gv
    exp_out[o] -= lr * gp
    exp_out[distinct] -= lr * gn
    step = sgns.select(name)
    step(W_in, W_out, np.array([c]), np.array([o]), negs[None, :], np.array([lr]))
    assert np.allclose(W_in, exp_in, atol=1e-12) and np.allclose(W_out, exp_out, atol=1e-12)


def test_kernel_backends_agree():
    rng = np.random.default_rng(5)
    W_in, W_out = rng.normal(size=(30, 12)), rng.normal(size=(30, 12))
    n = 500
    args = (rng.integers(0, 30, n), rng.integers(0, 30, n), rng.integers(0, 30, (n, 5)), np.linspace(0.025, 1e-4, n))
    a_in, a_out, b_in, b_out = W_in.copy(), W_out.copy(), W_in.copy(), W_out.copy()
    sgns.select("numpy")(a_in, a_out, *args)
    sgns.select("numba")(b_in, b_out, *args)
    assert np.allclose(a_in, b_in, atol=1e-12) and np.allclose(a_out, b_out, atol=1e-12)


def test_hyperparam_validation():
    EmbeddingHyperparams()
    for bad in (dict(dim=1), dict(window=0), dict(epochs=0), dict(min_count=0), dict(learning_rate=0), dict(negative_samples=0)):
        with pytest.raises(ValueError):
            EmbeddingHyperparams(**bad)


def test_build_vocab_min_count_and_order():
    docs = [TokenizedDoc("1", ("b", "a", "b", "c")), TokenizedDoc("2", ("a", "b"))]
    vocab, counts = build_vocab(docs, 2)
    assert vocab == ["b", "a"] and counts.tolist() == [3, 2]


def test_empty_vocabulary_rejected():
    with pytest.raises(ValueError):
        train_word2vec([TokenizedDoc("1", ("a", "b"))], EmbeddingHyperparams(min_count=2))


def test_cooccurrence_fixture(backend):
    wins = 0
    for seed in range(10):
        hp = EmbeddingHyperparams(dim=20, epochs=5, min_count=1, seed=seed)
        m = train_word2vec(cooccurrence_docs(seed), hp, backend=backend)
        assert np.isfinite(m.input_vectors).all() and np.isfinite(m.output_vectors).all()
        wins += cosine_similarity(m, "cve", "patch") > cosine_similarity(m, "cve", "banana")
    assert wins >= 9


def test_training_deterministic_and_backend_independent():
    docs = cooccurrence_docs(0)[:80]
    hp = EmbeddingHyperparams(dim=8, epochs=2, min_count=1, seed=4)
    a = train_word2vec(docs, hp, backend="numpy")
    b = train_word2vec(docs, hp, backend="numpy")
    c = train_word2vec(docs, hp, backend="numba")
    assert np.array_equal(a.input_vectors, b.input_vectors)
    assert np.allclose(a.input_vectors, c.input_vectors, atol=1e-10)
    d = train_word2vec(docs, EmbeddingHyperparams(dim=8, epochs=2, min_count=1, seed=5), backend="numpy")
    assert not np.array_equal(a.input_vectors, d.input_vectors)


def small_model(vocab, vectors):
    W = np.asarray(vectors, dtype=float)
    return EmbeddingModel(list(vocab), np.ones(len(vocab), dtype=np.int64), W, np.zeros_like(W), EmbeddingHyperparams(dim=W.shape[1]))


def test_embed_tweet():
    m = small_model(["a", "b"], [[1.0, 0.0], [0.0, 1.0]])
    v, ok = embed_tweet(m, TokenizedDoc("1", ("a", "b", "zzz")))
    assert ok and np.allclose(v, [0.5, 0.5])
    v, ok = embed_tweet(m, TokenizedDoc("2", ("a", "a", "b")))
    assert np.allclose(v, [2 / 3, 1 / 3])
    assert np.array_equal(embed_tweet(m, TokenizedDoc("4", ("b",)))[0], m.vector("b"))
    assert np.array_equal(embed_tweet(m, TokenizedDoc("5", ("b", "b")))[0], m.vector("b"))
    assert cosine_similarity(m, "a", "a") == pytest.approx(1.0)
    v, ok = embed_tweet(m, TokenizedDoc("3", ("zzz",)))
    assert not ok and np.allclose(v, 0.0)


def test_model_save_load(tmp_path):
    m = train_word2vec(cooccurrence_docs(1)[:40], EmbeddingHyperparams(dim=4, epochs=1, min_count=1))
    m.save(tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text(encoding="utf-8").splitlines()
    assert lines[0] == f"dim=4 vocab={len(m.vocab)}" and len(lines) == len(m.vocab) + 1
    back = EmbeddingModel.load(tmp_path / "m.txt")
    assert back.vocab == m.vocab and np.array_equal(back.input_vectors, m.input_vectors)


def test_top_keywords():
    docs = [tokenize("the exploit hits the server"), tokenize("exploit patch server"), tokenize("exploit now vulnerability")]
    assert top_keywords(docs, exclude=["vulnerability"]) == ("exploit", "server", "hits")
    assert "the" in stopwords()
    kw = top_keywords(docs)
    assert len(set(kw)) == len(kw) == 3


DISJOINT = ["alpha beta gamma", "beta gamma alpha delta", "gamma alpha beta",
            "omega sigma tau", "sigma tau omega psi", "tau omega sigma"]


def disjoint_model():
    vocab = ["alpha", "beta", "gamma", "delta", "omega", "sigma", "tau", "psi"]
    vecs = [[10, 0.1 * i] for i in range(4)] + [[-10, 0.1 * i] for i in range(4)]
    return small_model(vocab, vecs)


def test_mine_topics_disjoint_vocabularies(backend):
    res = mine_topics(make_tweets(DISJOINT), disjoint_model(), k=2, seed=0, backend=backend)
    assert sorted(c.tweet_count for c in res) == [3, 3]
    words = {frozenset(c.keywords) for c in res}
    assert words == {frozenset({"alpha", "beta", "gamma"}), frozenset({"omega", "sigma", "tau"})}


def test_topics_k_equals_n_and_counts_sum():
    texts = ["alpha", "beta", "alpha delta", "omega", "sigma", "omega psi", "unknown words only"]
    docs = [tokenize(t) for t in texts]
    res = cluster_topics(docs, disjoint_model(), k=6)
    assert len(res.kept) == 6
    assert [c.tweet_count for c in res.clusters] == [1] * 6
    with pytest.raises(KMeansError):
        cluster_topics(docs, disjoint_model(), k=7)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(DISJOINT + ["nothing here", "alpha", "tau psi"]), min_size=3, max_size=15), st.integers(1, 3))
def test_topic_counts_sum_to_embedded(texts, k):
    docs = [tokenize(t) for t in texts]
    m = disjoint_model()
    n_emb = sum(embed_tweet(m, d)[1] for d in docs)
    try:
        res = cluster_topics(docs, m, k=k)
    except KMeansError:
        assert n_emb < k or len({tuple(embed_tweet(m, d)[0]) for d in docs if embed_tweet(m, d)[1]}) < k
        return
    assert sum(c.tweet_count for c in res.clusters) == n_emb
    assert all(len(set(c.keywords)) == len(c.keywords) <= 3 for c in res.clusters)


def test_unique_drops_repeats():
    docs = [tokenize(t) for t in DISJOINT + DISJOINT[:2]]
    assert sum(c.tweet_count for c in cluster_topics(docs, disjoint_model(), k=2).clusters) == 8
    assert sum(c.tweet_count for c in cluster_topics(docs, disjoint_model(), k=2, unique=True).clusters) == 6


def test_auto_k_elbow():
    rng = np.random.default_rng(0)
    centers = np.array([[0, 0], [50, 0], [0, 50], [50, 50]], dtype=float)
    vocab, vecs, docs = [], [], []
    for c in range(4):
        for j in range(10):
            w = f"w{c}x{j}"
            vocab.append(w)
            vecs.append(centers[c] + rng.normal(size=2))
            docs.append(TokenizedDoc(w, (w,)))
    res = cluster_topics(docs, small_model(vocab, vecs), k="auto", k_scan=range(2, 9))
    assert res.k == 4 and [k for k, _ in res.curve] == list(range(2, 9))
    assert sorted(c.tweet_count for c in res.clusters) == [10] * 4


def test_cluster_words():
    groups = cluster_words(disjoint_model(), 2)
    assert sorted(map(sorted, groups)) == [sorted(["alpha", "beta", "gamma", "delta"]), sorted(["omega", "sigma", "tau", "psi"])]


def test_topic_cluster_dict_roundtrip():
    t = TopicCluster(3, 12, ("a", "b", "c"))
    assert TopicCluster.from_dict(t.to_dict()) == t
