"""Tokenization, vocabulary fitting and TF-IDF vectors."""

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"@(\w+)")
_CVE_RE = re.compile(r"cve-[0-9]{4}-[0-9]{4,}")
_SPLIT_RE = re.compile(r"[^a-z0-9-]+")


@dataclass(frozen=True)
class TokenizedDoc:
    doc_id: str
    tokens: tuple


def _split_plain(chunk: str) -> list:
    out = []
    for piece in _SPLIT_RE.split(chunk):
        piece = piece.strip("-")
        if piece:
            out.append(piece)
    return out


def tokenize_text(text: str, strip_urls: bool = True, keep_mentions: bool = True) -> list:
    """Lowercase ``text`` and split it into ``[a-z0-9-]`` terms.

    CVE identifiers are cut out first so they always come back as one token,
    even when glued to neighbouring text (``"cve-2020-0688's"``).
    """
    s = text.lower()
    if strip_urls:
        s = _URL_RE.sub(" ", s)
    s = _MENTION_RE.sub(r"\1" if keep_mentions else " ", s)
    tokens = []
    pos = 0
    for m in _CVE_RE.finditer(s):
        tokens.extend(_split_plain(s[pos:m.start()]))
        tokens.append(m.group(0))
        pos = m.end()
    tokens.extend(_split_plain(s[pos:]))
    return tokens


def tokenize(text: str, doc_id: str = "", strip_urls: bool = True, keep_mentions: bool = True) -> TokenizedDoc:
    return TokenizedDoc(doc_id, tuple(tokenize_text(text, strip_urls, keep_mentions)))


@dataclass
class Vocabulary:
    terms: list
    doc_freq: np.ndarray
    n_docs: int
    min_df: int = 1
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.doc_freq = np.asarray(self.doc_freq, dtype=np.int64)
        self.index = {t: i for i, t in enumerate(self.terms)}

    def __len__(self):
        return len(self.terms)

    def __contains__(self, term):
        return term in self.index

    def idf(self) -> np.ndarray:
        return np.log((1.0 + self.n_docs) / (1.0 + self.doc_freq)) + 1.0

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"n_docs={self.n_docs}\n")
            for term, df in zip(self.terms, self.doc_freq):
                fh.write(f"{term}\t{int(df)}\n")

    @classmethod
    def load(cls, path, min_df: int = 1) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if not header.startswith("n_docs="):
                raise ValueError(f"{path}: missing n_docs header")
            n_docs = int(header[len("n_docs="):])
            terms, dfs = [], []
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                term, df = line.split("\t")
                terms.append(term)
                dfs.append(int(df))
        return cls(terms, np.array(dfs, dtype=np.int64), n_docs, min_df)


def fit_vocabulary(docs: Sequence[TokenizedDoc], min_df: int = 1) -> Vocabulary:
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df = Counter()
    for doc in docs:
        df.update(set(doc.tokens))
    terms = sorted(t for t, c in df.items() if c >= min_df)
    return Vocabulary(terms, np.array([df[t] for t in terms], dtype=np.int64), len(docs), min_df)


@dataclass(frozen=True)
class TermWeightVector:
    doc_id: str
    entries: dict

    def norm(self) -> float:
        return math.sqrt(math.fsum(w * w for w in self.entries.values()))


def _weights(doc: TokenizedDoc, vocab: Vocabulary, idf: Optional[np.ndarray] = None):
    counts = Counter(t for t in doc.tokens if t in vocab.index)
    if not counts:
        return np.empty(0, dtype=np.int64), np.empty(0)
    idx = np.array(sorted(vocab.index[t] for t in counts), dtype=np.int64)
    if idf is None:
        idf = vocab.idf()
    tf = np.array([counts[vocab.terms[i]] for i in idx], dtype=np.float64)
    w = tf * idf[idx]
    w /= math.sqrt(math.fsum(w * w))
    return idx, w


def tfidf_vectorize(doc: TokenizedDoc, vocab: Vocabulary) -> TermWeightVector:
    idx, w = _weights(doc, vocab)
    return TermWeightVector(doc.doc_id, {int(i): float(x) for i, x in zip(idx, w)})


def tfidf_matrix(docs: Sequence[TokenizedDoc], vocab: Vocabulary) -> sp.csr_matrix:
    """Row-stacked TF-IDF vectors; row ``i`` equals ``tfidf_vectorize(docs[i])``."""
    idf = vocab.idf()
    indptr = [0]
    indices, data = [], []
    for doc in docs:
        idx, w = _weights(doc, vocab, idf)
        indices.append(idx)
        data.append(w)
        indptr.append(indptr[-1] + len(idx))
    indices = np.concatenate(indices) if indices else np.empty(0, dtype=np.int64)
    data = np.concatenate(data) if data else np.empty(0)
    return sp.csr_matrix((data, indices, np.array(indptr)), shape=(len(docs), len(vocab)))
