"""Pipeline orchestration and analyst reports (markdown, JSON, CSV)."""

import csv
import hashlib
import io
import json
import logging
import os
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Optional

from . import __version__
from ._accel import default_backend
from .clustering import KMeansError
from .config import PipelineConfig
from .corpus import CorpusStats, compute_stats, format_timestamp, keyword_filter, parse_timestamp, read_corpus
from .cves import Correlation, CveCountRow, CvssLookup, HttpNvdClient, count_mentions, cvss_correlation
from .errors import ConfigError, DataError, VulnwatchError
from .features import tokenize
from .relevance import (
    FailPolicy,
    HypothesisConfig,
    RemoteScorer,
    align_verdicts,
    cluster_relevance,
    filter_relevant,
    mock_scorer,
    read_verdicts,
    zero_shot_classify,
)
from .topics import EmbeddingHyperparams, TopicCluster, cluster_topics, stopwords, train_word2vec

log = logging.getLogger(__name__)


def top_phrases(tweets, n: int = 20, ngram_range=(1, 3)) -> list:
    """Most frequent token n-grams, skipping n-grams made only of stopwords.

    Counts every occurrence; ties are broken lexicographically.
    """
    lo, hi = ngram_range
    if not 1 <= lo <= hi <= 3:
        raise ValueError("ngram_range must satisfy 1 <= lo <= hi <= 3")
    stop = stopwords()
    counts = Counter()
    for t in tweets:
        toks = tokenize(t.text).tokens
        for size in range(lo, hi + 1):
            for i in range(len(toks) - size + 1):
                gram = toks[i:i + size]
                if all(g in stop for g in gram):
                    continue
                counts[" ".join(gram)] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:n]


@dataclass(frozen=True)
class Retention:
    method: str
    total: int
    retained: int
    failed: int = 0

    @property
    def fraction(self) -> float:
        return self.retained / self.total if self.total else 0.0


@dataclass
class Report:
    period: Optional[tuple]
    corpus_stats: CorpusStats
    retention: Retention
    top_cves: list
    correlation: Optional[Correlation]
    topics: list
    top_phrases: list
    provenance: dict
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "period": None if self.period is None else [format_timestamp(p) for p in self.period],
            "corpus_stats": self.corpus_stats.to_dict(),
            "retention": {
                "method": self.retention.method,
                "total": self.retention.total,
                "retained": self.retention.retained,
                "failed": self.retention.failed,
                "fraction": self.retention.fraction,
            },
            "top_cves": [{"cve_id": r.cve_id, "tweet_count": r.tweet_count, "cvss3": r.cvss3} for r in self.top_cves],
            "correlation": None
            if self.correlation is None
            else {"r": self.correlation.r, "n_used": self.correlation.n_used, "n_excluded": self.correlation.n_excluded},
            "topics": [t.to_dict() for t in self.topics],
            "top_phrases": [[p, c] for p, c in self.top_phrases],
            "provenance": self.provenance,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        ret = d["retention"]
        corr = d["correlation"]
        return cls(
            period=None if d["period"] is None else tuple(parse_timestamp(p) for p in d["period"]),
            corpus_stats=CorpusStats.from_dict(d["corpus_stats"]),
            retention=Retention(ret["method"], ret["total"], ret["retained"], ret["failed"]),
            top_cves=[CveCountRow(r["cve_id"], r["tweet_count"], r["cvss3"]) for r in d["top_cves"]],
            correlation=None if corr is None else Correlation(corr["r"], corr["n_used"], corr["n_excluded"]),
            topics=[TopicCluster.from_dict(t) for t in d["topics"]],
            top_phrases=[(p, c) for p, c in d["top_phrases"]],
            provenance=d["provenance"],
            warnings=list(d.get("warnings", [])),
        )


@contextmanager
def _stage(name: str):
    try:
        yield
    except VulnwatchError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except (ValueError, KMeansError, OSError) as exc:
        err = DataError(str(exc))
        err.stage = name
        raise err from exc


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def make_scorer(config: PipelineConfig):
    if config.scorer_url == "mock":
        return mock_scorer()
    if not config.scorer_url:
        raise ConfigError("method=zeroshot needs scorer_url (or verdicts_path)")
    return RemoteScorer(config.scorer_url)


def make_cvss_lookup(config: PipelineConfig) -> Optional[CvssLookup]:
    if config.cvss_source == "none":
        return None
    client = HttpNvdClient(config.nvd_url) if config.cvss_source == "remote" else None
    return CvssLookup(client, config.nvd_cache or None, ttl=timedelta(days=config.cvss_ttl_days))


def _window(config: PipelineConfig):
    if not config.window_start and not config.window_end:
        return None
    try:
        start = parse_timestamp(config.window_start) if config.window_start else parse_timestamp("0001-01-01T00:00:00Z")
        end = parse_timestamp(config.window_end) if config.window_end else parse_timestamp("9999-12-31T23:59:59Z")
    except ValueError as exc:
        raise ConfigError(f"bad window timestamp: {exc}") from exc
    return start, end


def classify(config: PipelineConfig, tweets, scorer=None, backend=None):
    """Run the configured relevance method; returns ``(verdicts, failed_count)``."""
    if config.verdicts_path:
        return align_verdicts(read_verdicts(config.verdicts_path), tweets), 0
    if config.method == "kmeans":
        return cluster_relevance(tweets, config.cluster_k, config.seed, config.min_df, backend=backend), 0
    scorer = scorer or make_scorer(config)
    policy = FailPolicy(
        retries=config.scorer_retries,
        backoff=config.scorer_backoff,
        max_failures=None if config.scorer_max_failures < 0 else config.scorer_max_failures,
        concurrency=config.scorer_concurrency,
        batch_size=config.scorer_batch_size,
    )
    res = zero_shot_classify(tweets, scorer, HypothesisConfig(config.hypothesis, config.threshold), policy)
    return res.verdicts, res.failed


def hyperparams(config: PipelineConfig) -> EmbeddingHyperparams:
    return EmbeddingHyperparams(
        dim=config.w2v_dim,
        window=config.w2v_window,
        negative_samples=config.w2v_negative,
        epochs=config.w2v_epochs,
        min_count=config.w2v_min_count,
        seed=config.seed,
    )


def build_report(config: PipelineConfig, corpus, scorer=None, cvss_lookup=None, backend=None) -> Report:
    """Ingest -> keyword filter -> relevance -> CVE and topic mining -> Report.

    ``scorer`` and ``cvss_lookup`` override what the config would construct.
    Errors carry the failing stage name in ``exc.stage``.
    """
    warnings = []
    backend = backend or default_backend()
    if scorer is None and config.method == "zeroshot" and not config.verdicts_path:
        scorer = make_scorer(config)
    with _stage("ingest"):
        read = read_corpus(corpus, config.strictness)
        if read.malformed:
            warnings.append(f"skipped {read.malformed} malformed records")
        if read.duplicates:
            warnings.append(f"dropped {read.duplicates} duplicate ids")
        collected = keyword_filter(read.tweets, config.keyword)
        stats = compute_stats(collected)
    if not collected:
        warnings.append("no tweets matched the keyword; report is empty")

    with _stage("relevance"):
        verdicts, failed = classify(config, collected, scorer, backend) if collected else ([], 0)
        relevant, _ = filter_relevant(verdicts, collected)
        if failed:
            warnings.append(f"{failed} tweets could not be scored and were dropped")
    retention = Retention(config.method if not config.verdicts_path else f"{config.method} (precomputed)", len(collected), len(relevant), failed)

    with _stage("cves"):
        window = _window(config)
        rows = count_mentions(relevant, window, per_occurrence=config.per_occurrence)
        lookup = cvss_lookup if cvss_lookup is not None else make_cvss_lookup(config)
        if lookup is not None:
            enriched = []
            for r in rows:
                try:
                    rec = lookup.fetch(r.cve_id)
                    enriched.append(CveCountRow(r.cve_id, r.tweet_count, rec.cvss3))
                except VulnwatchError:
                    if lookup.client is not None:
                        raise
                    enriched.append(r)
            rows = enriched
        correlation = None
        if lookup is not None:
            try:
                correlation = cvss_correlation(rows)
            except ValueError as exc:
                warnings.append(f"correlation unavailable: {exc}")

    with _stage("topics"):
        topics = []
        docs = [tokenize(t.text, t.id) for t in relevant]
        try:
            model = train_word2vec(docs, hyperparams(config), backend=backend)
            res = cluster_topics(
                docs,
                model,
                k=config.topic_k,
                seed=config.seed,
                k_scan=range(config.topic_k_min, config.topic_k_max + 1),
                unique=config.topic_unique,
                exclude=[config.keyword],
                backend=backend,
            )
            topics = res.clusters
        except (ValueError, KMeansError) as exc:
            warnings.append(f"topics unavailable: {exc}")

    with _stage("phrases"):
        phrases = top_phrases(collected, config.top_phrases, (config.ngram_min, config.ngram_max))

    provenance = {
        "tool_version": __version__,
        "kernel_backend": backend,
        "corpus_file": os.path.basename(str(corpus)),
        "corpus_sha256": _file_sha256(corpus),
        "config": config.to_dict(),
    }
    period = window if window is not None else stats.date_range
    return Report(period, stats, retention, rows[: config.top_cves], correlation, topics, phrases, provenance, warnings)


# ---------------------------------------------------------------------------
# rendering


def _fmt(x, digits=2):
    if x is None:
        return "N/A"
    if isinstance(x, float):
        return f"{x:,.{digits}f}"
    return f"{x:,}"


def render_markdown(report: Report) -> str:
    s = report.corpus_stats
    out = ["# Vulnerability chatter report", ""]
    if report.period:
        out += [f"Period: {format_timestamp(report.period[0])} to {format_timestamp(report.period[1])}", ""]
    out += [
        "## Corpus characteristics",
        "",
        "| Statistic | Value |",
        "|---|---|",
        f"| Number of Tweets | {_fmt(s.tweet_count)} |",
        f"| Avg. Tweets per Day | {_fmt(s.avg_tweets_per_day)} |",
        f"| Avg. Words per Tweet | {_fmt(s.avg_words_per_tweet)} |",
        f"| % English Tweets | {_fmt(s.pct_english, 1)}% |",
        f"| % Tweets with URL | {_fmt(s.pct_with_url, 1)}% |",
        "",
        "## Relevance filtering",
        "",
        f"Method: {report.retention.method}. Retained {_fmt(report.retention.retained)} of "
        f"{_fmt(report.retention.total)} tweets ({100 * report.retention.fraction:.2f}%).",
    ]
    if report.retention.failed:
        out.append(f"Unscored (dropped): {report.retention.failed}.")
    out += ["", "## Most mentioned CVEs", "", "| CVE ID | CVSS3 | Tweet Count |", "|---|---|---|"]
    out += [f"| {r.cve_id} | {_fmt(r.cvss3, 1)} | {_fmt(r.tweet_count)} |" for r in report.top_cves]
    if report.correlation is not None:
        c = report.correlation
        out += ["", f"Correlation of tweet count and CVSS3: r = {c.r:.2f} over {c.n_used} CVEs ({c.n_excluded} without a score excluded)."]
    out += ["", "## Topics", "", "| ID | Total Tweets | Keywords |", "|---|---|---|"]
    out += [f"| {t.id} | {_fmt(t.tweet_count)} | {', '.join(t.keywords)} |" for t in report.topics]
    out += ["", "## Most common phrases", "", "| Phrase | Count |", "|---|---|"]
    out += [f"| {p} | {_fmt(c)} |" for p, c in report.top_phrases]
    if report.warnings:
        out += ["", "## Warnings", ""] + [f"- {w}" for w in report.warnings]
    prov = report.provenance
    out += ["", "---", f"vulnwatch {prov.get('tool_version')}, seed {prov.get('config', {}).get('seed')}, kernels {prov.get('kernel_backend')}", ""]
    return "\n".join(out)


def render_json(report: Report) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def parse_report(text: str) -> Report:
    return Report.from_dict(json.loads(text))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def render_csv(report: Report) -> dict:
    s = report.corpus_stats
    return {
        "corpus_stats.csv": _csv(["statistic", "value"], [
            ["tweet_count", s.tweet_count],
            ["avg_tweets_per_day", s.avg_tweets_per_day],
            ["avg_words_per_tweet", s.avg_words_per_tweet],
            ["pct_english", s.pct_english],
            ["pct_with_url", s.pct_with_url],
        ]),
        "retention.csv": _csv(["method", "total", "retained", "failed", "fraction"], [[
            report.retention.method, report.retention.total, report.retention.retained,
            report.retention.failed, report.retention.fraction,
        ]]),
        "top_cves.csv": _csv(["cve_id", "tweet_count", "cvss3"], [
            [r.cve_id, r.tweet_count, "" if r.cvss3 is None else r.cvss3] for r in report.top_cves
        ]),
        "topics.csv": _csv(["id", "tweet_count", "keywords"], [
            [t.id, t.tweet_count, ";".join(t.keywords)] for t in report.topics
        ]),
        "top_phrases.csv": _csv(["phrase", "count"], report.top_phrases),
    }


def render(report: Report, fmt: str = "markdown", dest=None):
    """Render to text (markdown, json) or a dict of CSV files; write to ``dest`` when given.

    For CSV ``dest`` is a directory.
    """
    if fmt in ("json", "machine-readable"):
        doc = render_json(report)
    elif fmt == "markdown":
        doc = render_markdown(report)
    elif fmt == "csv":
        doc = render_csv(report)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if dest is not None:
        if isinstance(doc, dict):
            os.makedirs(dest, exist_ok=True)
            for name, text in doc.items():
                with open(os.path.join(dest, name), "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
        else:
            with open(dest, "w", encoding="utf-8") as fh:
                fh.write(doc)
    return doc
