"""Shared domain types for the translation gateway.

Everything here is an immutable value object: language tags, translation
jobs, draft sets coming back from the specialized translation model (STM),
and the demonstration triplets fed to the prompt builder. Invariants are
enforced at construction time, so a value that exists is always safe to
hand to another thread.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Sequence

_TAG_RE = re.compile(r"[a-z]{3}_[A-Za-z]{4}")

MODES = ("direct", "refine", "pivot")

#: Hard cap on drafts per source sentence; more would blow up prompt size.
MAX_NUM_PATHS = 16

#: Allowed drift between a reported sequence log-probability and the sum of
#: its per-token log-probabilities.
LOGPROB_SUM_TOLERANCE = 1e-4


class ScaleError(Exception):
    """Base class for every error raised by this package."""


class MalformedTag(ScaleError):
    """Language code does not match the ``xxx_Scrp`` shape."""


class UnknownLanguage(ScaleError):
    """Language code is well-formed but absent from the registry."""


class InvalidJob(ScaleError):
    """A TranslationJob failed validation; ``issues`` lists every violation."""

    def __init__(self, issues: Sequence[str]):
        super().__init__("invalid job: " + ", ".join(issues))
        self.issues = list(issues)


@dataclass(frozen=True)
class LanguageTag:
    """A Flores-style language code plus the name used inside prompts."""

    code: str
    display_name: str

    def __post_init__(self):
        if not _TAG_RE.fullmatch(self.code):
            raise MalformedTag(f"bad language code {self.code!r} (want e.g. xho_Latn)")
        if not self.display_name:
            raise ValueError(f"empty display name for {self.code!r}")


def load_language_registry(path: str | None = None) -> dict[str, str]:
    """Load a ``code -> display name`` registry.

    Format: UTF-8 lines of ``code<TAB>display name``; blank lines and ``#``
    comments are skipped. Without a path the bundled registry is used.
    """
    if path is None:
        text = resources.files("scale_mt").joinpath("data/languages.tsv").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    registry: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        code, _, name = line.partition("\t")
        registry[code.strip()] = name.strip()
    return registry


def parse_language_tag(raw: str, registry: dict[str, str]) -> LanguageTag:
    """Resolve a raw code against the registry.

    Raises MalformedTag when the code does not match the pattern, and
    UnknownLanguage when a well-formed code is missing from the registry
    (prompts need a display name, so unknown codes cannot pass through).
    """
    if not registry:
        raise ValueError("registry must be non-empty")
    if not _TAG_RE.fullmatch(raw):
        raise MalformedTag(f"bad language code {raw!r} (want e.g. xho_Latn)")
    if raw not in registry:
        raise UnknownLanguage(f"language code {raw!r} not in registry")
    return LanguageTag(code=raw, display_name=registry[raw])


@dataclass(frozen=True)
class TranslationJob:
    """One source segment plus everything needed to translate it."""

    id: str
    source_lang: LanguageTag
    target_lang: LanguageTag
    source_text: str
    mode: str  # "direct" | "refine" | "pivot"
    shots: int = 10
    num_paths: int = 1
    include_confidence: bool = True
    pivot_lang: LanguageTag | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source_lang": self.source_lang.code,
            "target_lang": self.target_lang.code,
            "source_text": self.source_text,
            "mode": self.mode,
            "shots": self.shots,
            "num_paths": self.num_paths,
            "include_confidence": self.include_confidence,
            "pivot_lang": self.pivot_lang.code if self.pivot_lang else None,
        }


def job_from_dict(data: dict[str, Any], registry: dict[str, str]) -> TranslationJob:
    """Build a job from its JSON form, resolving language codes."""
    pivot = data.get("pivot_lang")
    return TranslationJob(
        id=str(data["id"]),
        source_lang=parse_language_tag(data["source_lang"], registry),
        target_lang=parse_language_tag(data["target_lang"], registry),
        source_text=data["source_text"],
        mode=data["mode"],
        shots=int(data.get("shots", 10)),
        num_paths=int(data.get("num_paths", 1)),
        include_confidence=bool(data.get("include_confidence", True)),
        pivot_lang=parse_language_tag(pivot, registry) if pivot else None,
    )


def validate_job(job: TranslationJob) -> list[str]:
    """Return every violated invariant (empty list = valid job)."""
    issues: list[str] = []
    if job.mode not in MODES:
        issues.append("UnknownMode")
    if not job.source_text:
        issues.append("EmptySourceText")
    if job.source_lang.code == job.target_lang.code:
        issues.append("SameLanguagePair")
    if job.shots < 0:
        issues.append("NegativeShots")
    if job.num_paths < 1:
        issues.append("NumPathsTooSmall")
    elif job.num_paths > MAX_NUM_PATHS:
        issues.append("NumPathsTooLarge")
    if job.mode == "pivot":
        if job.pivot_lang is None:
            issues.append("MissingPivotLanguage")
        else:
            if job.pivot_lang.code == job.source_lang.code:
                issues.append("PivotEqualsSource")
            if job.pivot_lang.code == job.target_lang.code:
                issues.append("PivotEqualsTarget")
    return issues


@dataclass(frozen=True)
class Draft:
    """One STM hypothesis: text, per-token probabilities, and the natural-log
    probability of the whole sequence.

    ``tokens`` may be empty when the endpoint was asked not to return token
    probabilities; confidence-annotated rendering then fails loudly instead
    of silently dropping the annotation.
    """

    text: str
    tokens: tuple[tuple[str, float], ...] = ()
    seq_logprob: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "tokens", tuple((str(t), float(p)) for t, p in self.tokens)
        )
        if self.seq_logprob > 0:
            raise ValueError(f"seq_logprob must be <= 0, got {self.seq_logprob}")
        for tok, prob in self.tokens:
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"token probability out of [0, 1]: {tok!r} -> {prob}")
        if self.tokens and all(p > 0.0 for _, p in self.tokens):
            expected = sum(math.log(p) for _, p in self.tokens)
            if abs(self.seq_logprob - expected) > LOGPROB_SUM_TOLERANCE:
                raise ValueError(
                    f"seq_logprob {self.seq_logprob} inconsistent with token "
                    f"probabilities (sum of ln p = {expected})"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "tokens": [{"text": t, "prob": p} for t, p in self.tokens],
            "seq_logprob": self.seq_logprob,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Draft":
        return cls(
            text=data["text"],
            tokens=tuple((tok["text"], tok["prob"]) for tok in data.get("tokens", [])),
            seq_logprob=float(data["seq_logprob"]),
        )


def _dedup_by_text(drafts: Iterable[Draft]) -> list[Draft]:
    """Keep the first occurrence of every exact text; order-stable."""
    seen: set[str] = set()
    out: list[Draft] = []
    for draft in drafts:
        if draft.text not in seen:
            seen.add(draft.text)
            out.append(draft)
    return out


@dataclass(frozen=True)
class DraftSet:
    """Ranked, duplicate-free draft paths for one source sentence."""

    drafts: tuple[Draft, ...]
    stm_model_id: str
    stm_latency_ms: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "drafts", tuple(self.drafts))
        if self.stm_latency_ms < 0:
            raise ValueError("stm_latency_ms must be >= 0")
        texts = [d.text for d in self.drafts]
        if len(set(texts)) != len(texts):
            raise ValueError("draft texts must be pairwise distinct")
        for a, b in zip(self.drafts, self.drafts[1:]):
            if a.seq_logprob < b.seq_logprob:
                raise ValueError("drafts must be ordered by seq_logprob, best first")

    @classmethod
    def from_paths(
        cls,
        paths: Iterable[Draft],
        stm_model_id: str,
        stm_latency_ms: float = 0.0,
        limit: int | None = None,
    ) -> "DraftSet":
        """Rank by sequence log-probability (stable sort), drop duplicate
        texts keeping the best-ranked one, optionally truncate."""
        ranked = sorted(paths, key=lambda d: -d.seq_logprob)
        unique = _dedup_by_text(ranked)
        if limit is not None:
            unique = unique[:limit]
        return cls(tuple(unique), stm_model_id, stm_latency_ms)

    def to_dict(self) -> dict[str, Any]:
        return {
            "drafts": [d.to_dict() for d in self.drafts],
            "stm_model_id": self.stm_model_id,
            "stm_latency_ms": self.stm_latency_ms,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DraftSet":
        return cls(
            drafts=tuple(Draft.from_dict(d) for d in data["drafts"]),
            stm_model_id=data["stm_model_id"],
            stm_latency_ms=float(data["stm_latency_ms"]),
        )


@dataclass(frozen=True)
class DemonstrationTriplet:
    """One in-context example: source sentence, its STM draft set, and the
    reference target. A list of these is what distinguishes the draft-guided
    prompt from plain source/target few-shot."""

    source: str
    drafts: DraftSet
    target: str

    def __post_init__(self):
        if not self.source:
            raise ValueError("triplet source must be non-empty")
        if not self.target:
            raise ValueError("triplet target must be non-empty")
        if not self.drafts.drafts:
            raise ValueError("triplet needs at least one draft")
