"""Demonstration pool: parallel dev pairs, BM25 selection, and a per-config
cache of STM drafts for each entry.

Pool file format (JSONL), one object per line:

    {"source": "...", "target": "...",
     "drafts": [{"text": "...", "tokens": [...], "seq_logprob": -1.2}, ...]}

``drafts`` is optional and pre-seeds the draft cache: pre-seeded drafts are
served (truncated to the requested path count) whenever a keyed cache
lookup misses, which lets pools ship with fixed demonstrations and keeps
offline runs from hitting the STM at all.
"""

from __future__ import annotations

import json
import math
import threading
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple

from .core import Draft, DraftSet, ScaleError


class PoolParseError(ScaleError):
    """A pool file line could not be parsed; any malformed line is fatal."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"pool line {line}: {reason}")
        self.line = line
        self.reason = reason


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, strip leading/trailing
    punctuation from every token; tokens that end up empty are dropped.
    Script-agnostic and cheap."""
    out = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if end > start:
            out.append(raw[start:end])
    return out


@dataclass(frozen=True)
class PoolStats:
    """Corpus statistics backing the BM25 scorer."""

    doc_count: int
    avg_doc_len: float
    doc_freq: Mapping[str, int]


def bm25_score(
    query_tokens: list[str],
    entry_tokens: list[str],
    stats: PoolStats,
    k1: float = 1.5,
    b: float = 0.75,
) -> float:
    """Okapi BM25 with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).

    Unknown query terms (df = 0) keep a finite idf and simply contribute
    nothing unless the entry contains them. Terms are summed in sorted
    order so the score is reproducible across processes.
    """
    counts = Counter(entry_tokens)
    doc_len = len(entry_tokens)
    score = 0.0
    for term in sorted(set(query_tokens)):
        tf = counts.get(term, 0)
        if tf == 0:
            continue
        df = stats.doc_freq.get(term, 0)
        idf = math.log(1.0 + (stats.doc_count - df + 0.5) / (df + 0.5))
        norm = k1 * (1.0 - b + b * doc_len / stats.avg_doc_len)
        score += idf * tf * (k1 + 1.0) / (tf + norm)
    return score


class DraftCacheKey(NamedTuple):
    """Identity of a cached demo draft set. The STM model id is part of the
    key so swapping in a new model naturally regenerates drafts."""

    stm_model_id: str
    target_lang: str
    num_paths: int
    sampling: str


@dataclass
class PoolEntry:
    source: str
    target: str
    preseeded: DraftSet | None = None


class DemoPool:
    """Immutable after load, except for the internally synchronized draft
    cache. Selection never touches the cache, so reads never block on
    draft generation for other entries."""

    def __init__(self, entries: list[PoolEntry]):
        if not entries:
            raise ValueError("demonstration pool must be non-empty")
        self.entries = entries
        self._tokens = [tokenize(e.source) for e in entries]
        doc_freq = Counter()
        for tokens in self._tokens:
            doc_freq.update(set(tokens))
        self.stats = PoolStats(
            doc_count=len(entries),
            avg_doc_len=sum(len(t) for t in self._tokens) / len(entries),
            doc_freq=dict(doc_freq),
        )
        self._cache: dict[tuple[int, DraftCacheKey], DraftSet] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    def entry_tokens(self, index: int) -> list[str]:
        return self._tokens[index]

    def get_drafts(
        self,
        index: int,
        key: DraftCacheKey,
        fetch: Callable[[PoolEntry], DraftSet] | None = None,
    ) -> DraftSet:
        """Drafts for one entry under one config key.

        Resolution order: keyed cache, then pre-seeded pool drafts
        (truncated to ``key.num_paths``), then ``fetch``. The fetch runs
        outside the lock; on a race the first stored result wins.
        """
        cache_key = (index, key)
        with self._lock:
            hit = self._cache.get(cache_key)
        if hit is not None:
            return hit
        entry = self.entries[index]
        if entry.preseeded is not None:
            drafts = DraftSet(
                entry.preseeded.drafts[: key.num_paths],
                entry.preseeded.stm_model_id,
                0.0,
            )
        elif fetch is not None:
            drafts = fetch(entry)
        else:
            raise ScaleError(
                f"no drafts cached for entry {index} under {key} and no fetcher given"
            )
        with self._lock:
            return self._cache.setdefault(cache_key, drafts)


def load_pool(path: str) -> DemoPool:
    """Load a JSONL pool file, building the BM25 index.

    Any malformed line is fatal and reported with its 1-based line number;
    an empty pool is an error as well.
    """
    entries: list[PoolEntry] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PoolParseError(lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(data, dict):
                raise PoolParseError(lineno, "expected a JSON object")
            source = data.get("source")
            target = data.get("target")
            if not isinstance(source, str) or not source:
                raise PoolParseError(lineno, "'source' must be a non-empty string")
            if not isinstance(target, str) or not target:
                raise PoolParseError(lineno, "'target' must be a non-empty string")
            preseeded = None
            if data.get("drafts"):
                try:
                    drafts = [Draft.from_dict(d) for d in data["drafts"]]
                    preseeded = DraftSet.from_paths(drafts, stm_model_id="preseeded")
                except (KeyError, TypeError, ValueError) as exc:
                    raise PoolParseError(lineno, f"invalid drafts: {exc}") from exc
            entries.append(PoolEntry(source=source, target=target, preseeded=preseeded))
    if not entries:
        raise PoolParseError(0, "pool file holds no entries")
    return DemoPool(entries)


def select_demonstration_indices(pool: DemoPool, source_text: str, k: int) -> list[int]:
    """Indices of the top-k most similar entries by BM25 against the query
    source text.

    Ranking ties break toward the lower entry index. The result is returned
    least-similar first, so that rendering it in order places the most
    similar demonstration right next to the test input.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return []
    query = tokenize(source_text)
    scored = sorted(
        range(len(pool.entries)),
        key=lambda i: (-bm25_score(query, pool.entry_tokens(i), pool.stats), i),
    )
    top = scored[: min(k, len(pool.entries))]
    return list(reversed(top))


def select_demonstrations(pool: DemoPool, source_text: str, k: int) -> list[PoolEntry]:
    """Top-k most similar entries, least-similar first (see
    ``select_demonstration_indices``)."""
    return [pool.entries[i] for i in select_demonstration_indices(pool, source_text, k)]
