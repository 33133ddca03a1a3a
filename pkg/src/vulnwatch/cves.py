"""CVE extraction, per-CVE tweet counts, CVSS3 enrichment and count/score correlation."""

import math
import os
import re
import threading
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Optional, Protocol, Sequence

from .corpus import format_timestamp, parse_timestamp
from .errors import NvdUnavailableError

CVE_PATTERN = re.compile(r"[Cc][Vv][Ee]-[0-9]{4}-[0-9]{4,}")
_CANONICAL = re.compile(r"CVE-[0-9]{4}-[0-9]{4,}")
NVD_KEY_ENV = "VULNWATCH_NVD_KEY"
DEFAULT_NVD_URL = "https://services.nvd.nist.gov/rest/json/cves/2.0"


def is_canonical(cve_id: str) -> bool:
    return isinstance(cve_id, str) and _CANONICAL.fullmatch(cve_id) is not None


def extract_cves(text: str) -> list:
    out = []
    for m in CVE_PATTERN.finditer(text):
        cid = m.group(0).upper()
        if cid not in out:
            out.append(cid)
    return out


@dataclass(frozen=True)
class CveCountRow:
    cve_id: str
    tweet_count: int
    cvss3: Optional[float] = None


def count_mentions(tweets, window=None, per_occurrence: bool = False) -> list:
    """Rank CVEs by the number of tweets in ``window`` mentioning them.

    ``window`` is an inclusive ``(start, end)`` pair of aware datetimes, or
    None for the whole corpus. With ``per_occurrence`` every in-text
    occurrence counts instead of once per tweet.
    """
    if window is not None:
        start, end = window
        if start > end:
            raise ValueError("window start is after window end")
    counts = Counter()
    for t in tweets:
        if window is not None and not (start <= t.created_at <= end):
            continue
        if per_occurrence:
            counts.update(m.group(0).upper() for m in CVE_PATTERN.finditer(t.text))
        else:
            counts.update(extract_cves(t.text))
    return [CveCountRow(c, n) for c, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


@dataclass(frozen=True)
class CveRecord:
    cve_id: str
    cvss3: Optional[float] = None
    known: bool = True

    def __post_init__(self):
        if self.cvss3 is not None and not 0.0 <= self.cvss3 <= 10.0:
            raise ValueError(f"{self.cve_id}: CVSS score {self.cvss3} outside [0, 10]")


class NvdClient(Protocol):
    def lookup(self, cve_id: str) -> CveRecord:
        """Return the record; raise NvdUnavailableError when the service cannot be reached."""


def parse_nvd_response(cve_id: str, payload: dict) -> CveRecord:
    """Pull the CVSS v3.x base score out of an NVD 2.0 API response."""
    vulns = payload.get("vulnerabilities") or []
    if not vulns:
        return CveRecord(cve_id, None, known=False)
    metrics = (vulns[0].get("cve") or {}).get("metrics") or {}
    for key in ("cvssMetricV31", "cvssMetricV30"):
        entries = metrics.get(key) or []
        # prefer the NVD's own (Primary) assessment over CNA-supplied ones
        entries = sorted(entries, key=lambda e: e.get("type") != "Primary")
        for e in entries:
            score = (e.get("cvssData") or {}).get("baseScore")
            if score is not None:
                return CveRecord(cve_id, float(score))
    return CveRecord(cve_id, None)


class HttpNvdClient:
    def __init__(self, base_url: str = DEFAULT_NVD_URL, api_key: Optional[str] = None, timeout: float = 30.0):
        self.base_url = base_url
        self.api_key = api_key if api_key is not None else os.environ.get(NVD_KEY_ENV)
        self.timeout = timeout

    def lookup(self, cve_id: str) -> CveRecord:
        import requests

        headers = {"apiKey": self.api_key} if self.api_key else {}
        try:
            resp = requests.get(self.base_url, params={"cveId": cve_id}, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise NvdUnavailableError(f"NVD request for {cve_id} failed: {exc}") from exc
        if resp.status_code == 404:
            return CveRecord(cve_id, None, known=False)
        if resp.status_code != 200:
            raise NvdUnavailableError(f"NVD returned HTTP {resp.status_code} for {cve_id}")
        return parse_nvd_response(cve_id, resp.json())


class CvssCache:
    """Tab-separated ``cve_id<TAB>score-or-NA<TAB>fetched_at`` file; last line per id wins."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()
        self._entries = {}
        if path and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    parts = line.rstrip("\n").split("\t")
                    if len(parts) != 3:
                        continue
                    cid, score, fetched = parts
                    self._entries[cid] = (None if score == "NA" else float(score), parse_timestamp(fetched))

    def get(self, cve_id):
        return self._entries.get(cve_id)

    def put(self, cve_id: str, score: Optional[float], fetched_at: datetime) -> None:
        with self._lock:
            self._entries[cve_id] = (score, fetched_at)
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(f"{cve_id}\t{'NA' if score is None else repr(score)}\t{format_timestamp(fetched_at)}\n")


class CvssLookup:
    """Cache-first CVSS source. ``client=None`` means cache only."""

    def __init__(self, client: Optional[NvdClient] = None, cache_path=None, ttl: timedelta = timedelta(days=7), now=None):
        self.client = client
        self.cache = CvssCache(cache_path)
        self.ttl = ttl
        self._now = now or (lambda: datetime.now(timezone.utc))

    def fetch(self, cve_id: str) -> CveRecord:
        if not is_canonical(cve_id):
            raise ValueError(f"not a canonical CVE id: {cve_id!r}")
        hit = self.cache.get(cve_id)
        if hit is not None and (self.client is None or self._now() - hit[1] <= self.ttl):
            return CveRecord(cve_id, hit[0])
        if self.client is None:
            raise NvdUnavailableError(f"{cve_id} not in CVSS cache and no remote source configured")
        try:
            rec = self.client.lookup(cve_id)
        except NvdUnavailableError:
            if hit is not None:
                return CveRecord(cve_id, hit[0])
            raise
        # unknown ids stay out of the cache so they are retried once the NVD publishes them
        if rec.known:
            self.cache.put(cve_id, rec.cvss3, self._now())
        return rec


def fetch_cvss(cve_id: str, source: CvssLookup) -> CveRecord:
    return source.fetch(cve_id)


def enrich(rows: Sequence[CveCountRow], source: CvssLookup) -> list:
    return [CveCountRow(r.cve_id, r.tweet_count, source.fetch(r.cve_id).cvss3) for r in rows]


@dataclass(frozen=True)
class Correlation:
    r: float
    n_used: int
    n_excluded: int


def pearson(x, y) -> float:
    """Sample Pearson correlation via centered sums, clipped to [-1, 1]."""
    n = len(x)
    if n != len(y):
        raise ValueError("length mismatch")
    if n < 2:
        raise ValueError("need at least 2 paired values")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [a - mx for a in x]
    dy = [b - my for b in y]
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("zero variance")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    return max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))


def cvss_correlation(rows: Sequence[CveCountRow]) -> Correlation:
    used = [r for r in rows if r.cvss3 is not None]
    if len(used) < 2:
        raise ValueError("need at least 2 rows with a CVSS score")
    r = pearson([float(u.tweet_count) for u in used], [float(u.cvss3) for u in used])
    return Correlation(r, len(used), len(rows) - len(used))
