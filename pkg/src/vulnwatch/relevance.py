"""Cyber-relevance verdicts: CVE-labelled k-means clusters or zero-shot entailment scoring."""

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from .clustering import kmeans_fit
from .cves import extract_cves
from .errors import DataError, ScorerUnavailableError
from .features import fit_vocabulary, tfidf_matrix, tokenize

log = logging.getLogger(__name__)

DEFAULT_HYPOTHESIS = "This text is related to cyber security"
SCORER_TOKEN_ENV = "VULNWATCH_SCORER_TOKEN"
MOCK_KEYWORDS = ("vulnerability", "cve", "exploit", "patch", "malware", "security")


@dataclass(frozen=True)
class RelevanceVerdict:
    tweet_id: str
    method: str
    relevant: bool
    score: Optional[float]
    cluster_id: Optional[int] = None

    def to_record(self) -> dict:
        return {
            "tweet_id": self.tweet_id,
            "method": self.method,
            "relevant": self.relevant,
            "score": self.score,
            "cluster_id": self.cluster_id,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RelevanceVerdict":
        return cls(rec["tweet_id"], rec["method"], bool(rec["relevant"]), rec["score"], rec.get("cluster_id"))


@dataclass(frozen=True)
class HypothesisConfig:
    template: str = DEFAULT_HYPOTHESIS
    threshold: float = 0.5

    def __post_init__(self):
        if not self.template:
            raise ValueError("hypothesis template must be non-empty")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly between 0 and 1")


class EntailmentScorer(Protocol):
    def score(self, premise: str, hypothesis: str) -> float:
        ...


class KeywordMockScorer:
    """Deterministic stand-in: 0.9 when the premise mentions a security keyword, else 0.1."""

    def __init__(self, keywords=MOCK_KEYWORDS):
        self.keywords = tuple(keywords)

    def score(self, premise: str, hypothesis: str) -> float:
        text = premise.lower()
        return 0.9 if any(k in text for k in self.keywords) else 0.1


def mock_scorer() -> KeywordMockScorer:
    return KeywordMockScorer()


class RemoteScorer:
    """Client for the ``POST /score`` and ``POST /score_batch`` entailment service.

    Any non-200 status or transport error raises ``ConnectionError`` so the
    caller's retry policy applies.
    """

    def __init__(self, url: str, token: Optional[str] = None, timeout: float = 60.0):
        self.url = url.rstrip("/")
        self.token = token if token is not None else os.environ.get(SCORER_TOKEN_ENV)
        self.timeout = timeout
        self._session = None

    def _post(self, path: str, body: dict) -> dict:
        import requests

        if self._session is None:
            self._session = requests.Session()
        headers = {"Content-Type": "application/json; charset=utf-8"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        data = json.dumps(body, ensure_ascii=False).encode("utf-8")
        try:
            resp = self._session.post(self.url + path, data=data, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ConnectionError(str(exc)) from exc
        if resp.status_code != 200:
            raise ConnectionError(f"scorer returned HTTP {resp.status_code}")
        return resp.json()

    def score(self, premise: str, hypothesis: str) -> float:
        return float(self._post("/score", {"premise": premise, "hypothesis": hypothesis})["entailment"])

    def score_batch(self, premises: Sequence[str], hypothesis: str) -> list:
        out = self._post("/score_batch", {"premises": list(premises), "hypothesis": hypothesis})["entailments"]
        if len(out) != len(premises):
            raise ConnectionError(f"score_batch returned {len(out)} values for {len(premises)} premises")
        return [float(x) for x in out]


@dataclass
class FailPolicy:
    retries: int = 3
    backoff: float = 0.5
    max_failures: Optional[int] = None
    concurrency: int = 1
    batch_size: int = 1


@dataclass
class ZeroShotResult:
    verdicts: list
    failed: int


def _checked(values, scorer) -> list:
    out = [float(v) for v in values]
    for v in out:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"scorer {type(scorer).__name__} returned {v}, outside [0, 1]")
    return out


def _score_chunk(scorer, texts, hypothesis, policy: FailPolicy, sleep) -> list:
    for attempt in range(policy.retries + 1):
        try:
            if len(texts) > 1:
                raw = scorer.score_batch(texts, hypothesis)
            else:
                raw = [scorer.score(texts[0], hypothesis)]
            return _checked(raw, scorer)
        except (ConnectionError, TimeoutError, OSError) as exc:
            if attempt == policy.retries:
                log.warning("scorer gave up after %d attempts: %s", attempt + 1, exc)
                return [None] * len(texts)
            sleep(policy.backoff * 2 ** attempt)


def zero_shot_classify(
    tweets,
    scorer: EntailmentScorer,
    config: HypothesisConfig = HypothesisConfig(),
    policy: FailPolicy = FailPolicy(),
    sleep=time.sleep,
) -> ZeroShotResult:
    """Score every tweet against the hypothesis; ``relevant = score >= threshold``.

    Tweets go to the scorer one at a time, or ``policy.batch_size`` at a time
    when the scorer has ``score_batch``. A request that keeps failing after
    ``policy.retries`` retries leaves its tweets with ``score=None,
    relevant=False``, counted in ``failed``; more than ``policy.max_failures``
    such tweets aborts with ScorerUnavailableError. Scores outside [0, 1]
    raise ValueError. Verdicts always come back in input order.
    """
    texts = [t.text for t in tweets]
    size = policy.batch_size if hasattr(scorer, "score_batch") else 1
    chunks = [texts[i:i + max(size, 1)] for i in range(0, len(texts), max(size, 1))]

    def run(chunk):
        return _score_chunk(scorer, chunk, config.template, policy, sleep)

    scores = []
    if policy.concurrency > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=policy.concurrency) as pool:
            for part in pool.map(run, chunks):
                scores.extend(part)
    else:
        for chunk in chunks:
            scores.extend(run(chunk))
            failed = sum(s is None for s in scores)
            if policy.max_failures is not None and failed > policy.max_failures:
                raise ScorerUnavailableError(f"scorer failed on {failed} tweets; giving up")
    failed = sum(s is None for s in scores)
    if policy.max_failures is not None and failed > policy.max_failures:
        raise ScorerUnavailableError(f"scorer failed on {failed} tweets; giving up")
    verdicts = [
        RelevanceVerdict(t.id, "zeroshot", s is not None and s >= config.threshold, s)
        for t, s in zip(tweets, scores)
    ]
    return ZeroShotResult(verdicts, failed)


def cluster_relevance(tweets, k: int = 2, seed: int = 0, min_df: int = 1, backend=None) -> list:
    """Label a k-means cluster of TF-IDF vectors relevant iff any member mentions a CVE."""
    if not tweets:
        raise DataError("cannot cluster an empty corpus")
    if len(tweets) < k:
        raise DataError(f"corpus of {len(tweets)} tweets is smaller than k={k}")
    docs = [tokenize(t.text, t.id) for t in tweets]
    X = tfidf_matrix(docs, fit_vocabulary(docs, min_df))
    model = kmeans_fit(X, k, seed=seed, backend=backend)
    hot = {int(model.labels[i]) for i, t in enumerate(tweets) if extract_cves(t.text)}
    return [
        RelevanceVerdict(t.id, "kmeans", int(c) in hot, 1.0 if int(c) in hot else 0.0, int(c))
        for t, c in zip(tweets, model.labels)
    ]


def filter_relevant(verdicts: Sequence[RelevanceVerdict], tweets):
    """Return ``(relevant tweets, retention fraction)``; verdicts align with tweets by id."""
    if len(verdicts) != len(tweets):
        raise DataError(f"{len(verdicts)} verdicts for {len(tweets)} tweets")
    for v, t in zip(verdicts, tweets):
        if v.tweet_id != t.id:
            raise DataError(f"verdict for {v.tweet_id!r} does not match tweet {t.id!r}")
    kept = [t for v, t in zip(verdicts, tweets) if v.relevant]
    return kept, (len(kept) / len(tweets) if tweets else 0.0)


def write_verdicts(verdicts, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_record(), separators=(",", ":")) + "\n")


def read_verdicts(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [RelevanceVerdict.from_record(json.loads(line)) for line in fh if line.strip()]


def align_verdicts(verdicts, tweets) -> list:
    """Reorder pre-computed verdicts to match ``tweets``; missing ids raise DataError."""
    by_id = {v.tweet_id: v for v in verdicts}
    missing = [t.id for t in tweets if t.id not in by_id]
    if missing:
        raise DataError(f"no verdict for {len(missing)} tweets (first: {missing[0]!r})")
    return [by_id[t.id] for t in tweets]
