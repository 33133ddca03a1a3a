import json
import shutil

import pytest

from vulnwatch.cli import main
from vulnwatch.corpus import read_corpus

from conftest import DATA


@pytest.fixture
def work(tmp_path, monkeypatch):
    for name in ("golden_corpus.jsonl", "golden.cfg", "cvss_cache.tsv"):
        shutil.copy(DATA / name, tmp_path / name)
    monkeypatch.chdir(tmp_path)
    for var in ("VULNWATCH_SEED", "VULNWATCH_FORMAT", "VULNWATCH_KEYWORD"):
        monkeypatch.delenv(var, raising=False)
    return tmp_path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_report_json_deterministic(work, capsys):
    code, a, _ = run(capsys, "report", "golden_corpus.jsonl", "--config", "golden.cfg")
    assert code == 0
    _, b, _ = run(capsys, "report", "golden_corpus.jsonl", "--config", "golden.cfg")
    assert a == b and json.loads(a)["retention"]["retained"] == 4


def test_report_markdown_and_csv(work, capsys):
    code, out, _ = run(capsys, "report", "golden_corpus.jsonl", "--config", "golden.cfg", "--format", "markdown")
    assert code == 0 and "## Most mentioned CVEs" in out
    assert run(capsys, "report", "golden_corpus.jsonl", "--config", "golden.cfg", "--format", "csv")[0] == 1
    assert run(capsys, "report", "golden_corpus.jsonl", "--config", "golden.cfg", "--format", "csv", "-o", "bundle")[0] == 0
    assert (work / "bundle" / "top_cves.csv").exists()


def test_stats(work, capsys):
    code, out, _ = run(capsys, "stats", "golden_corpus.jsonl", "--keyword", "flaw", "--format", "json")
    rows = {r["statistic"]: r["value"] for r in json.loads(out)}
    assert code == 0 and rows["Number of Tweets"] == 6 and rows["% Tweets with URL"] == 50.0


def test_filter_then_cves_and_topics(work, capsys):
    code, out, _ = run(capsys, "filter", "golden_corpus.jsonl", "--keyword", "flaw", "--scorer-url", "mock",
                       "--verdicts-out", "v.jsonl", "--relevant-out", "rel.jsonl")
    assert code == 0 and "retained 4 of 6" in out
    assert len(read_corpus("rel.jsonl").tweets) == 4
    code, out, _ = run(capsys, "cves", "golden_corpus.jsonl", "--verdicts", "v.jsonl", "--cvss-source", "cache",
                       "--nvd-cache", "cvss_cache.tsv")
    assert code == 0 and "| CVE-2020-0688 | 8.8 | 3 |" in out and "Correlation r = 0.3754" in out
    code, out, _ = run(capsys, "topics", "rel.jsonl", "--topic-k", "2", "--min-count", "1", "--dim", "8", "--format", "json")
    assert code == 0 and sum(t["tweet_count"] for t in json.loads(out)) == 4
    code, out, _ = run(capsys, "topics", "rel.jsonl", "--min-count", "1", "--dim", "8", "--word-clusters", "2", "--save-model", "m.txt")
    assert code == 0 and (work / "m.txt").read_text().startswith("dim=8 ")


def test_ingest_files(work, capsys, tmp_path):
    raw = tmp_path / "raw.jsonl"
    raw.write_text(
        '{"data": {"id": "9", "created_at": "2020-02-22T01:00:00.000Z", "text": "flaw CVE-2020-0001", "lang": "en"}}\n'
        "not json\n", encoding="utf-8")
    code, out, _ = run(capsys, "ingest", "golden_corpus.jsonl", str(raw), "--keyword", "flaw", "-o", "arch.jsonl")
    assert code == 0 and "wrote 7 tweets" in out and "malformed 1" in out
    code, out, _ = run(capsys, "ingest", "golden_corpus.jsonl", "--keyword", "flaw", "-o", "arch.jsonl")
    assert "wrote 0 tweets" in out and "duplicates 6" in out


def test_ingest_stream(work, capsys, http_service, monkeypatch):
    monkeypatch.setenv("VULNWATCH_STREAM_TOKEN", "t")
    body = '{"id": "1", "created_at": "2020-02-19T08:15:00Z", "text": "a vulnerability"}\n'
    svc = http_service(lambda *a: (200, body))
    code, out, _ = run(capsys, "ingest", "--stream-url", svc.url, "-o", "s.jsonl", "--max-posts", "1")
    assert code == 0 and "wrote 1" in out
    assert svc.requests[0][2]["Authorization"] == "Bearer t"
    bad = http_service(lambda *a: (401, {}))
    assert run(capsys, "ingest", "--stream-url", bad.url, "-o", "s2.jsonl")[0] == 3


def test_evaluate(work, capsys):
    (work / "bench.csv").write_text(
        "text,label\nvulnerability CVE-2020-0688 patch,threat\nvulnerability in my heart,irrelevant\n"
        "business vulnerability news,business\nunrelated,threat\n", encoding="utf-8")
    code, out, _ = run(capsys, "evaluate", "bench.csv", "--scorer-url", "mock", "--format", "json")
    doc = json.loads(out)
    assert code == 0 and doc["loaded"] == 4 and doc["prepared"] == 3
    assert doc["metrics"]["all"]["accuracy"] == 100.0 * 2 / 3


def test_exit_codes(work, capsys, monkeypatch):
    assert run(capsys, "report")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "report", "golden_corpus.jsonl", "--threshold", "2")[0] == 1
    assert run(capsys, "report", "golden_corpus.jsonl", "--method", "zeroshot")[0] == 1
    code, _, err = run(capsys, "report", "missing.jsonl", "--scorer-url", "mock")
    assert code == 2 and "[ingest]" in err
    monkeypatch.setenv("VULNWATCH_SCORER_RETRIES", "0")
    monkeypatch.setenv("VULNWATCH_SCORER_MAX_FAILURES", "0")
    code, _, err = run(capsys, "report", "golden_corpus.jsonl", "--config", "golden.cfg", "--scorer-url", "http://127.0.0.1:9")
    assert code == 3 and "[relevance]" in err
    code, _, err = run(capsys, "cves", "golden_corpus.jsonl", "--cvss-source", "remote", "--nvd-url", "http://127.0.0.1:9")
    assert code == 3


def test_version(capsys):
    assert main(["--version"]) == 0
    assert "vulnwatch 0.1.0" in capsys.readouterr().out
