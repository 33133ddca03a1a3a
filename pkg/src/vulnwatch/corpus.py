"""Tweet archives: reading, keyword filtering, corpus statistics, live collection."""

import json
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, Optional, Protocol, Sequence

from .errors import AuthenticationError, DuplicateIdError, ExternalServiceError, MalformedRecordError

log = logging.getLogger(__name__)

ARCHIVE_FIELDS = ("id", "created_at", "text", "lang", "urls", "author_id")
STREAM_TOKEN_ENV = "VULNWATCH_STREAM_TOKEN"


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime, truncated to seconds."""
    if not isinstance(value, str) or not value:
        raise ValueError("timestamp must be a non-empty string")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {value!r} has no UTC offset")
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Tweet:
    id: str
    created_at: datetime
    text: str
    lang: str = "und"
    urls: tuple = ()
    author_id: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("tweet id must be a non-empty string")
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError(f"tweet {self.id}: text is empty")
        if not isinstance(self.lang, str) or not self.lang:
            raise ValueError(f"tweet {self.id}: lang must be a non-empty string")
        if not isinstance(self.created_at, datetime) or self.created_at.tzinfo is None:
            raise ValueError(f"tweet {self.id}: created_at must be an aware datetime")
        object.__setattr__(self, "created_at", self.created_at.astimezone(timezone.utc).replace(microsecond=0))
        object.__setattr__(self, "urls", tuple(self.urls))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "created_at": format_timestamp(self.created_at),
            "text": self.text,
            "lang": self.lang,
            "urls": list(self.urls),
            "author_id": self.author_id,
        }

    @classmethod
    def from_record(cls, rec) -> "Tweet":
        if not isinstance(rec, dict):
            raise ValueError("record is not an object")
        missing = [k for k in ARCHIVE_FIELDS if k not in rec]
        if missing:
            raise ValueError(f"missing fields {missing}")
        urls = rec["urls"]
        if not isinstance(urls, list) or not all(isinstance(u, str) for u in urls):
            raise ValueError("urls must be an array of strings")
        author = rec["author_id"]
        if author is not None and not isinstance(author, str):
            raise ValueError("author_id must be a string or null")
        for key in ("id", "text", "lang"):
            if not isinstance(rec[key], str):
                raise ValueError(f"{key} must be a string")
        return cls(
            id=rec["id"],
            created_at=parse_timestamp(rec["created_at"]),
            text=rec["text"],
            lang=rec["lang"],
            urls=tuple(urls),
            author_id=author,
        )


def tweet_to_line(tweet: Tweet) -> str:
    return json.dumps(tweet.to_record(), ensure_ascii=False, separators=(",", ":")) + "\n"


@dataclass
class CorpusReadResult:
    tweets: list
    malformed: int = 0
    duplicates: int = 0


def read_corpus(path, strictness: str = "strict", duplicates: str = "keep-first") -> CorpusReadResult:
    """Read a line-delimited tweet archive.

    ``strictness`` is ``"strict"`` (first malformed line raises) or ``"skip"``
    (malformed lines are counted and skipped). ``duplicates`` is
    ``"keep-first"`` or ``"error"``. Blank lines are ignored.
    """
    if strictness not in ("strict", "skip"):
        raise ValueError(f"unknown strictness {strictness!r}")
    if duplicates not in ("keep-first", "error"):
        raise ValueError(f"unknown duplicate policy {duplicates!r}")
    result = CorpusReadResult(tweets=[])
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                tweet = Tweet.from_record(json.loads(line))
            except (ValueError, TypeError) as exc:
                if strictness == "strict":
                    raise MalformedRecordError(line_no, str(exc)) from exc
                result.malformed += 1
                continue
            if tweet.id in seen:
                if duplicates == "error":
                    raise DuplicateIdError(f"duplicate tweet id {tweet.id!r} at line {line_no}")
                result.duplicates += 1
                continue
            seen.add(tweet.id)
            result.tweets.append(tweet)
    return result


def write_corpus(tweets: Iterable[Tweet], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for t in tweets:
            fh.write(tweet_to_line(t))
            n += 1
    return n


def keyword_filter(tweets: Sequence[Tweet], keyword: str) -> list:
    if not keyword:
        raise ValueError("keyword must be non-empty")
    needle = keyword.casefold()
    return [t for t in tweets if needle in t.text.casefold()]


@dataclass(frozen=True)
class CorpusStats:
    tweet_count: int = 0
    avg_tweets_per_day: float = 0.0
    avg_words_per_tweet: float = 0.0
    pct_english: float = 0.0
    pct_with_url: float = 0.0
    date_range: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {
            "tweet_count": self.tweet_count,
            "avg_tweets_per_day": self.avg_tweets_per_day,
            "avg_words_per_tweet": self.avg_words_per_tweet,
            "pct_english": self.pct_english,
            "pct_with_url": self.pct_with_url,
            "date_range": None if self.date_range is None else [format_timestamp(d) for d in self.date_range],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusStats":
        dr = d.get("date_range")
        return cls(
            tweet_count=int(d["tweet_count"]),
            avg_tweets_per_day=float(d["avg_tweets_per_day"]),
            avg_words_per_tweet=float(d["avg_words_per_tweet"]),
            pct_english=float(d["pct_english"]),
            pct_with_url=float(d["pct_with_url"]),
            date_range=None if dr is None else tuple(parse_timestamp(x) for x in dr),
        )


def compute_stats(tweets: Sequence[Tweet]) -> CorpusStats:
    n = len(tweets)
    if n == 0:
        return CorpusStats()
    words = sum(len(t.text.split()) for t in tweets)
    english = sum(1 for t in tweets if t.lang == "en")
    with_url = sum(1 for t in tweets if t.urls)
    first = min(t.created_at for t in tweets)
    last = max(t.created_at for t in tweets)
    # distinct UTC calendar days spanned, inclusive of both ends
    days = (last.date() - first.date()).days + 1
    return CorpusStats(
        tweet_count=n,
        avg_tweets_per_day=n / days,
        avg_words_per_tweet=words / n,
        pct_english=100.0 * english / n,
        pct_with_url=100.0 * with_url / n,
        date_range=(first, last),
    )


# ---------------------------------------------------------------------------
# live collection


class StreamClient(Protocol):
    def stream(self) -> Iterator[dict]:
        """Yield raw post payloads; raise ConnectionError on transient failure."""


def normalize_post(post: dict) -> Tweet:
    """Turn a raw stream payload into a Tweet.

    Accepts archive-shaped records and Twitter v2 style payloads
    (``{"data": {...}}`` with ``entities.urls[].expanded_url``).
    """
    data = post.get("data", post)
    urls = data.get("urls")
    if urls is None:
        ents = (data.get("entities") or {}).get("urls") or []
        urls = [u.get("expanded_url") or u.get("url") for u in ents]
        urls = [u for u in urls if u]
    return Tweet(
        id=str(data["id"]),
        created_at=parse_timestamp(data["created_at"]),
        text=data["text"],
        lang=data.get("lang") or "und",
        urls=tuple(urls),
        author_id=None if data.get("author_id") is None else str(data["author_id"]),
    )


def _existing_ids(path) -> set:
    if not os.path.exists(path):
        return set()
    ids = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            try:
                ids.add(json.loads(line)["id"])
            except (ValueError, KeyError, TypeError):
                continue
    return ids


@dataclass
class CollectStats:
    written: int = 0
    skipped_duplicates: int = 0
    skipped_nonmatching: int = 0
    skipped_malformed: int = 0
    reconnects: int = 0
    errors: list = field(default_factory=list)


def stream_collect(
    client: StreamClient,
    keyword: str,
    sink,
    max_retries: int = 5,
    backoff: float = 1.0,
    max_posts: Optional[int] = None,
    sleep=time.sleep,
) -> CollectStats:
    """Append every matching post from ``client`` to the archive at ``sink``.

    Each record is written with a single ``write`` + flush so a crash never
    leaves a partial line. Transient ``ConnectionError``s reconnect with
    exponential backoff; ids already present in the sink are not rewritten.
    """
    stats = CollectStats()
    seen = _existing_ids(sink)
    needle = keyword.casefold()
    failures = 0
    with open(sink, "a", encoding="utf-8") as fh:
        while True:
            try:
                for post in client.stream():
                    try:
                        tweet = normalize_post(post)
                    except (KeyError, ValueError, TypeError):
                        stats.skipped_malformed += 1
                        continue
                    if needle not in tweet.text.casefold():
                        stats.skipped_nonmatching += 1
                        continue
                    if tweet.id in seen:
                        stats.skipped_duplicates += 1
                        continue
                    fh.write(tweet_to_line(tweet))
                    fh.flush()
                    seen.add(tweet.id)
                    stats.written += 1
                    failures = 0
                    if max_posts is not None and stats.written >= max_posts:
                        return stats
                return stats
            except AuthenticationError:
                raise
            except ConnectionError as exc:
                failures += 1
                stats.errors.append(str(exc))
                if failures > max_retries:
                    raise ExternalServiceError(f"stream failed after {max_retries} retries: {exc}") from exc
                delay = backoff * 2 ** (failures - 1)
                log.warning("stream interrupted (%s); reconnecting in %.1fs", exc, delay)
                sleep(delay)
                stats.reconnects += 1


class HttpStreamClient:
    """Line-delimited JSON stream over HTTP with bearer-token auth."""

    def __init__(self, url: str, token: Optional[str] = None, timeout: float = 90.0):
        self.url = url
        self.token = token if token is not None else os.environ.get(STREAM_TOKEN_ENV)
        self.timeout = timeout

    def stream(self) -> Iterator[dict]:
        import requests

        if not self.token:
            raise AuthenticationError(f"no stream token; set {STREAM_TOKEN_ENV}")
        headers = {"Authorization": f"Bearer {self.token}"}
        try:
            with requests.get(self.url, headers=headers, stream=True, timeout=self.timeout) as resp:
                if resp.status_code in (401, 403):
                    raise AuthenticationError(f"stream rejected credentials (HTTP {resp.status_code})")
                if resp.status_code != 200:
                    raise ConnectionError(f"stream returned HTTP {resp.status_code}")
                for line in resp.iter_lines(decode_unicode=True):
                    if line and line.strip():
                        yield json.loads(line)
        except requests.RequestException as exc:
            raise ConnectionError(str(exc)) from exc

