"""Labelled benchmark preparation and binary classification metrics."""

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from .cves import extract_cves
from .errors import DataError

RAW_LABELS = ("threat", "business", "unknown", "irrelevant")


@dataclass(frozen=True)
class LabelledTweet:
    text: str
    raw_label: str

    @property
    def label(self) -> bool:
        return self.raw_label != "irrelevant"


def normalize_label(raw) -> str:
    lab = str(raw).strip().lower()
    if lab not in RAW_LABELS:
        raise DataError(f"unknown raw label {raw!r}; expected one of {RAW_LABELS}")
    return lab


def prepare_benchmark(records, keyword: str = "vulnerability", case_sensitive: bool = False) -> list:
    """Keep records whose text contains ``keyword`` and collapse labels to relevant/irrelevant.

    ``records`` holds LabelledTweets or ``(text, raw_label)`` pairs.
    """
    out = []
    needle = keyword if case_sensitive else keyword.casefold()
    for rec in records:
        if isinstance(rec, LabelledTweet):
            text, raw = rec.text, rec.raw_label
        else:
            text, raw = rec
        lab = normalize_label(raw)
        hay = text if case_sensitive else text.casefold()
        if needle in hay:
            out.append(LabelledTweet(text, lab))
    return out


def load_benchmark(path, text_column="text", label_column="label", delimiter: Optional[str] = None) -> list:
    """Read a delimiter-separated (or JSON-lines, by ``.jsonl``/``.json`` suffix) benchmark file.

    The delimiter defaults to tab for ``.tsv`` files and comma otherwise.
    """
    p = str(path)
    if p.endswith((".jsonl", ".json")):
        rows = []
        with open(p, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    rows.append(LabelledTweet(rec[text_column], normalize_label(rec[label_column])))
        return rows
    if delimiter is None:
        delimiter = "\t" if p.endswith(".tsv") else ","
    with open(p, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = {text_column, label_column} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{p}: missing columns {sorted(missing)}")
        return [LabelledTweet(r[text_column], normalize_label(r[label_column])) for r in reader]


def _pct(num, den):
    return None if den == 0 else 100.0 * num / den


@dataclass(frozen=True)
class EvalMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    subset: str = "all"

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self):
        return _pct(self.tp + self.tn, self.total)

    @property
    def precision(self):
        return _pct(self.tp, self.tp + self.fp)

    @property
    def recall(self):
        return _pct(self.tp, self.tp + self.fn)

    @property
    def f1(self):
        return _pct(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(accuracy=self.accuracy, precision=self.precision, recall=self.recall, f1=self.f1)
        return d


def score_predictions(predicted: Sequence[bool], labels: Sequence[bool], subset: str = "all") -> EvalMetrics:
    if len(predicted) != len(labels):
        raise ValueError(f"{len(predicted)} predictions for {len(labels)} labels")
    if not labels:
        raise ValueError("nothing to score")
    tp = fp = fn = tn = 0
    for p, y in zip(predicted, labels):
        if p and y:
            tp += 1
        elif p:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return EvalMetrics(tp, fp, fn, tn, subset)


def subset_metrics(predicted, labels, mask, subset: str = "subset") -> EvalMetrics:
    if not (len(predicted) == len(labels) == len(mask)):
        raise ValueError("predicted, labels and mask must align")
    idx = [i for i, m in enumerate(mask) if m]
    if not idx:
        raise ValueError("mask selects no items")
    return score_predictions([predicted[i] for i in idx], [labels[i] for i in idx], subset)


def has_cve_mask(texts) -> list:
    return [bool(extract_cves(t)) for t in texts]


def evaluate_suite(predicted, items: Sequence[LabelledTweet]) -> dict:
    """Full-set, has-CVE and no-CVE metrics, plus the has-CVE share of the set."""
    labels = [it.label for it in items]
    mask = has_cve_mask([it.text for it in items])
    out = {"all": score_predictions(predicted, labels, "all")}
    if any(mask):
        out["has-CVE"] = subset_metrics(predicted, labels, mask, "has-CVE")
    if not all(mask):
        out["no-CVE"] = subset_metrics(predicted, labels, [not m for m in mask], "no-CVE")
    return out
