"""Command-line entry point: ``vulnwatch <subcommand>``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 external-service failure.
"""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone

from . import __version__
from .clustering import KMeansError
from .config import load_config
from .corpus import (
    CorpusStats,
    Tweet,
    HttpStreamClient,
    compute_stats,
    keyword_filter,
    read_corpus,
    stream_collect,
    write_corpus,
)
from .cves import count_mentions, cvss_correlation, enrich
from .errors import ConfigError, DataError, VulnwatchError
from .evaluation import evaluate_suite, has_cve_mask, load_benchmark, prepare_benchmark
from .features import tokenize
from .relevance import align_verdicts, filter_relevant, read_verdicts, write_verdicts
from .report import _csv, _window, build_report, classify, hyperparams, make_cvss_lookup, render
from .topics import cluster_topics, cluster_words, train_word2vec

log = logging.getLogger("vulnwatch")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(text: str, output=None):
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _table(fmt, header, rows, title=""):
    if fmt == "json":
        return json.dumps([dict(zip(header, r)) for r in rows], indent=2, ensure_ascii=False) + "\n"
    if fmt == "csv":
        return _csv(header, rows)
    lines = [f"## {title}", ""] if title else []
    lines += ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join("N/A" if c is None else str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _load(cfg, path, verdicts=None):
    read = read_corpus(path, cfg.strictness)
    if read.malformed:
        log.warning("skipped %d malformed records", read.malformed)
    tweets = read.tweets
    if verdicts:
        tweets, _ = filter_relevant(align_verdicts(read_verdicts(verdicts), tweets), tweets)
    return tweets


class FileSource:
    """Replay archive or raw-payload files through the stream collector."""

    def __init__(self, paths):
        self.paths = paths
        self.bad_lines = 0

    def stream(self):
        for path in self.paths:
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    try:
                        yield json.loads(line)
                    except ValueError:
                        self.bad_lines += 1


def cmd_ingest(cfg, args):
    if args.stream_url:
        source = HttpStreamClient(args.stream_url)
    elif args.inputs:
        source = FileSource(args.inputs)
    else:
        raise ConfigError("ingest needs input files or --stream-url")
    keyword = "" if args.all else cfg.keyword
    stats = stream_collect(source, keyword, args.output, max_posts=args.max_posts)
    bad = stats.skipped_malformed + getattr(source, "bad_lines", 0)
    print(
        f"wrote {stats.written} tweets to {args.output} "
        f"(duplicates {stats.skipped_duplicates}, non-matching {stats.skipped_nonmatching}, malformed {bad})"
    )


def _stats_rows(s: CorpusStats):
    rows = [
        ("Number of Tweets", s.tweet_count),
        ("Avg. Tweets per Day", round(s.avg_tweets_per_day, 2)),
        ("Avg. Words per Tweet", round(s.avg_words_per_tweet, 2)),
        ("% English Tweets", round(s.pct_english, 2)),
        ("% Tweets with URL", round(s.pct_with_url, 2)),
    ]
    if s.date_range:
        rows.append(("Date range", f"{s.date_range[0].isoformat()} to {s.date_range[1].isoformat()}"))
    return rows


def cmd_stats(cfg, args):
    tweets = _load(cfg, args.archive)
    if not args.all:
        tweets = keyword_filter(tweets, cfg.keyword)
    _emit(_table(cfg.format, ["statistic", "value"], _stats_rows(compute_stats(tweets)), "Corpus characteristics"), args.output)


def cmd_filter(cfg, args):
    tweets = keyword_filter(_load(cfg, args.archive), cfg.keyword)
    if not tweets:
        raise DataError("no tweets matched the keyword")
    verdicts, failed = classify(cfg, tweets)
    kept, fraction = filter_relevant(verdicts, tweets)
    if args.verdicts_out:
        write_verdicts(verdicts, args.verdicts_out)
    if args.relevant_out:
        write_corpus(kept, args.relevant_out)
    print(f"method {cfg.method}: retained {len(kept)} of {len(tweets)} ({100 * fraction:.2f}%), unscored {failed}")


def cmd_cves(cfg, args):
    tweets = _load(cfg, args.archive, args.verdicts)
    rows = count_mentions(tweets, _window(cfg), per_occurrence=cfg.per_occurrence)
    lookup = make_cvss_lookup(cfg)
    if lookup is not None:
        rows = enrich(rows, lookup)
    top = rows[: cfg.top_cves] if cfg.top_cves else rows
    out = _table(cfg.format, ["cve_id", "cvss3", "tweet_count"], [(r.cve_id, r.cvss3, r.tweet_count) for r in top], "Most mentioned CVEs")
    if lookup is not None and cfg.format == "markdown":
        try:
            c = cvss_correlation(rows)
            out += f"\nCorrelation r = {c.r:.4f} over {c.n_used} CVEs ({c.n_excluded} unscored excluded)\n"
        except ValueError as exc:
            out += f"\nCorrelation unavailable: {exc}\n"
    _emit(out, args.output)


def cmd_topics(cfg, args):
    tweets = _load(cfg, args.archive, args.verdicts)
    docs = [tokenize(t.text, t.id) for t in tweets]
    model = train_word2vec(docs, hyperparams(cfg))
    if args.save_model:
        model.save(args.save_model)
    if args.word_clusters:
        groups = cluster_words(model, args.word_clusters, seed=cfg.seed)
        rows = [(j, len(g), ", ".join(g[:10])) for j, g in enumerate(groups)]
        _emit(_table(cfg.format, ["id", "terms", "top_terms"], rows, "Word clusters"), args.output)
        return
    res = cluster_topics(
        docs, model, k=cfg.topic_k, seed=cfg.seed,
        k_scan=range(cfg.topic_k_min, cfg.topic_k_max + 1), unique=cfg.topic_unique, exclude=[cfg.keyword],
    )
    out = ""
    if res.curve is not None and cfg.format == "markdown":
        out += _table("markdown", ["k", "sse"], [(k, f"{s:.4f}") for k, s in res.curve], "SSE curve") + "\n"
        out += f"elbow k = {res.k}\n\n"
    out += _table(cfg.format, ["id", "tweet_count", "keywords"], [(t.id, t.tweet_count, ", ".join(t.keywords)) for t in res.clusters], "Topics")
    _emit(out, args.output)


def cmd_evaluate(cfg, args):
    raw = load_benchmark(args.benchmark, args.text_column, args.label_column, args.delimiter)
    items = prepare_benchmark(raw, cfg.keyword, case_sensitive=args.case_sensitive)
    if not items:
        raise DataError("benchmark is empty after keyword filtering")
    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    tweets = [Tweet(f"b{i}", epoch, it.text) for i, it in enumerate(items)]
    verdicts, failed = classify(cfg, tweets)
    if args.verdicts_out:
        write_verdicts(verdicts, args.verdicts_out)
    suite = evaluate_suite([v.relevant for v in verdicts], items)
    pos = sum(it.label for it in items)
    share = sum(has_cve_mask([it.text for it in items]))
    if cfg.format == "json":
        doc = {
            "loaded": len(raw),
            "prepared": len(items),
            "positive_pct": 100.0 * pos / len(items),
            "has_cve_pct": 100.0 * share / len(items),
            "unscored": failed,
            "metrics": {k: m.to_dict() for k, m in suite.items()},
        }
        _emit(json.dumps(doc, indent=2) + "\n", args.output)
        return
    rows = [
        (m.subset, m.tp + m.fp + m.fn + m.tn, _r(m.accuracy), _r(m.precision), _r(m.recall), _r(m.f1))
        for m in suite.values()
    ]
    out = (
        f"loaded {len(raw)}, kept {len(items)} containing {cfg.keyword!r}; "
        f"{100.0 * pos / len(items):.2f}% positive; {100.0 * share / len(items):.2f}% mention a CVE\n\n"
    )
    out += _table(cfg.format, ["subset", "n", "accuracy", "precision", "recall", "f1"], rows, f"Relevance ({cfg.method})")
    _emit(out, args.output)


def _r(x):
    return None if x is None else round(x, 2)


def cmd_report(cfg, args):
    report = build_report(cfg, args.archive)
    if cfg.format == "csv":
        if not args.output:
            raise ConfigError("--format csv needs --output <directory>")
        render(report, "csv", args.output)
    else:
        doc = render(report, cfg.format)
        _emit(doc, args.output)
    for w in report.warnings:
        log.warning(w)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--format", choices=["markdown", "json", "machine-readable", "csv"])
    common.add_argument("--keyword")
    common.add_argument("-o", "--output", help="output file (directory for csv reports)")
    common.add_argument("--strictness", choices=["strict", "skip"])
    common.add_argument("-v", "--verbose", action="store_true")

    relevance = argparse.ArgumentParser(add_help=False)
    relevance.add_argument("--method", choices=["kmeans", "zeroshot"])
    relevance.add_argument("--k", dest="cluster_k", type=int, help="clusters for the k-means method")
    relevance.add_argument("--scorer-url", help="entailment service base URL, or 'mock'")
    relevance.add_argument("--threshold", type=float)
    relevance.add_argument("--hypothesis")
    relevance.add_argument("--verdicts-path", help="pre-computed verdict file instead of classifying")

    cvss = argparse.ArgumentParser(add_help=False)
    cvss.add_argument("--cvss-source", choices=["none", "cache", "remote"])
    cvss.add_argument("--nvd-cache")
    cvss.add_argument("--nvd-url")

    topic = argparse.ArgumentParser(add_help=False)
    topic.add_argument("--topic-k", help="cluster count or 'auto' for an elbow scan")
    topic.add_argument("--k-range", help="elbow scan range lo:hi (inclusive)")
    topic.add_argument("--unique", dest="topic_unique", action="store_const", const=True)
    topic.add_argument("--min-count", dest="w2v_min_count", type=int)
    topic.add_argument("--epochs", dest="w2v_epochs", type=int)
    topic.add_argument("--dim", dest="w2v_dim", type=int)

    p = _Parser(prog="vulnwatch", description="Cyber-relevance filtering and mining of vulnerability tweets.")
    p.add_argument("--version", action="version", version=f"vulnwatch {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="normalize archives or a live stream into an archive")
    s.add_argument("inputs", nargs="*")
    s.add_argument("--stream-url")
    s.add_argument("--max-posts", type=int)
    s.add_argument("--all", action="store_true", help="keep tweets without the keyword")

    s = sub.add_parser("stats", parents=[common], help="corpus characteristics")
    s.add_argument("archive")
    s.add_argument("--all", action="store_true", help="skip the keyword filter")

    s = sub.add_parser("filter", parents=[common, relevance], help="classify tweets for cyber-relevance")
    s.add_argument("archive")
    s.add_argument("--verdicts-out")
    s.add_argument("--relevant-out")

    s = sub.add_parser("cves", parents=[common, cvss], help="per-CVE tweet counts and CVSS correlation")
    s.add_argument("archive")
    s.add_argument("--verdicts", help="keep only tweets judged relevant in this verdict file")
    s.add_argument("--top", dest="top_cves", type=int)
    s.add_argument("--start", dest="window_start")
    s.add_argument("--end", dest="window_end")
    s.add_argument("--per-occurrence", action="store_const", const=True)

    s = sub.add_parser("topics", parents=[common, topic], help="word2vec topic clusters")
    s.add_argument("archive")
    s.add_argument("--verdicts")
    s.add_argument("--word-clusters", type=int, metavar="K", help="cluster word vectors instead of tweets")
    s.add_argument("--save-model")

    s = sub.add_parser("evaluate", parents=[common, relevance], help="score a relevance method on a labelled benchmark")
    s.add_argument("benchmark")
    s.add_argument("--text-column", default="text")
    s.add_argument("--label-column", default="label")
    s.add_argument("--delimiter")
    s.add_argument("--case-sensitive", action="store_true")
    s.add_argument("--verdicts-out")

    s = sub.add_parser("report", parents=[common, relevance, cvss, topic], help="full pipeline report")
    s.add_argument("archive")
    return p


_CONFIG_FLAGS = (
    "seed", "format", "keyword", "strictness", "method", "cluster_k", "scorer_url", "threshold", "hypothesis",
    "verdicts_path", "cvss_source", "nvd_cache", "nvd_url", "top_cves", "window_start", "window_end",
    "per_occurrence", "topic_k", "topic_unique", "w2v_min_count", "w2v_epochs", "w2v_dim",
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code or 0
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: getattr(args, k) for k in _CONFIG_FLAGS if hasattr(args, k)}
    try:
        if getattr(args, "k_range", None):
            try:
                lo, hi = (int(x) for x in args.k_range.split(":"))
            except ValueError:
                raise ConfigError(f"--k-range expects lo:hi, got {args.k_range!r}") from None
            overrides.update(topic_k_min=lo, topic_k_max=hi)
        cfg = load_config(args.config, overrides=overrides)
        handler = globals()[f"cmd_{args.command}"]
        handler(cfg, args)
    except VulnwatchError as exc:
        where = f"[{exc.stage}] " if exc.stage else ""
        print(f"vulnwatch: {where}{exc}", file=sys.stderr)
        return exc.exit_code
    except (KMeansError, ValueError, OSError) as exc:
        print(f"vulnwatch: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
