"""Pipeline configuration: flat ``key = value`` files, environment overrides, CLI flags.

Precedence is CLI flag > ``VULNWATCH_<KEY>`` environment variable > file > default.
"""

import os
from dataclasses import asdict, dataclass, fields
from typing import Optional
from urllib.parse import urlparse

from .errors import ConfigError

ENV_PREFIX = "VULNWATCH_"
FORMATS = ("markdown", "json", "csv")
_FORMAT_ALIASES = {"machine-readable": "json", "md": "markdown"}


@dataclass
class PipelineConfig:
    keyword: str = "vulnerability"
    method: str = "zeroshot"
    hypothesis: str = "This text is related to cyber security"
    threshold: float = 0.5
    cluster_k: int = 2
    min_df: int = 1
    seed: int = 0
    scorer_url: str = ""
    scorer_retries: int = 3
    scorer_backoff: float = 0.5
    scorer_concurrency: int = 1
    scorer_batch_size: int = 1
    scorer_max_failures: int = -1
    verdicts_path: str = ""
    cvss_source: str = "none"
    nvd_url: str = "https://services.nvd.nist.gov/rest/json/cves/2.0"
    nvd_cache: str = ""
    cvss_ttl_days: float = 7.0
    per_occurrence: bool = False
    window_start: str = ""
    window_end: str = ""
    top_cves: int = 5
    topic_k: str = "10"
    topic_k_min: int = 2
    topic_k_max: int = 15
    topic_unique: bool = False
    w2v_dim: int = 100
    w2v_window: int = 5
    w2v_negative: int = 5
    w2v_epochs: int = 5
    w2v_min_count: int = 5
    top_phrases: int = 20
    ngram_min: int = 1
    ngram_max: int = 3
    strictness: str = "skip"
    format: str = "markdown"

    def validate(self) -> "PipelineConfig":
        self.format = _FORMAT_ALIASES.get(self.format, self.format)
        checks = [
            (bool(self.keyword), "keyword must be non-empty"),
            (self.method in ("kmeans", "zeroshot"), f"method must be kmeans or zeroshot, got {self.method!r}"),
            (0.0 < self.threshold < 1.0, "threshold must lie strictly between 0 and 1"),
            (bool(self.hypothesis), "hypothesis must be non-empty"),
            (self.cluster_k >= 1, "cluster_k must be positive"),
            (self.min_df >= 1, "min_df must be positive"),
            (self.cvss_source in ("none", "cache", "remote"), "cvss_source must be none, cache or remote"),
            (self.strictness in ("strict", "skip"), "strictness must be strict or skip"),
            (self.format in FORMATS, f"format must be one of {FORMATS}"),
            (1 <= self.ngram_min <= self.ngram_max <= 3, "need 1 <= ngram_min <= ngram_max <= 3"),
            (self.topic_k == "auto" or self.topic_k.isdigit() and int(self.topic_k) >= 1, "topic_k must be a positive integer or 'auto'"),
            (2 <= self.topic_k_min and self.topic_k_min + 2 <= self.topic_k_max, "topic scan needs 2 <= topic_k_min and at least 3 values"),
            (self.top_cves >= 0 and self.top_phrases >= 0, "table lengths must be non-negative"),
            (self.scorer_retries >= 0 and self.scorer_concurrency >= 1 and self.scorer_batch_size >= 1, "invalid scorer policy"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for key in ("scorer_url", "nvd_url"):
            url = getattr(self, key)
            if url and url != "mock":
                parsed = urlparse(url)
                if parsed.scheme not in ("http", "https") or not parsed.netloc:
                    raise ConfigError(f"{key} is not a valid http(s) URL: {url!r}")
        if self.cvss_source == "cache" and not self.nvd_cache:
            raise ConfigError("cvss_source=cache requires nvd_cache")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(name: str, typ, raw: str):
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return text


def _types() -> dict:
    hints = {"str": str, "int": int, "float": float, "bool": bool}
    return {f.name: hints.get(f.type, f.type) if isinstance(f.type, str) else f.type for f in fields(PipelineConfig)}


def parse_config_text(text: str) -> dict:
    types = _types()
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"config line {n}: unknown key {key!r}")
        out[key] = _coerce(key, types[key], value)
    return out


def load_config(path: Optional[str] = None, env=None, overrides: Optional[dict] = None) -> PipelineConfig:
    env = os.environ if env is None else env
    types = _types()
    values = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key, typ in types.items():
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            values[key] = _coerce(key, typ, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, types[key], str(value)) if isinstance(value, str) and types[key] is not str else value
    return PipelineConfig(**values).validate()
