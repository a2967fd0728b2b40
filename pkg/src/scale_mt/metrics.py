"""Lexical quality metrics, literalness analysis, and clients for external
neural scorers and word aligners.

chrf_pp and corpus_bleu are implemented from first principles over explicit
n-gram counts. Tokenization rules are spelled out on each function because
the test oracles reimplement them independently and the two must agree to
1e-9.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Sequence

from .core import ScaleError
from .http_util import EndpointRejected, MalformedResponse, TransportFailure, post_json


class EmptyReference(ScaleError):
    """chrF++ needs a non-empty reference."""


class LengthMismatch(ScaleError):
    """corpus_bleu needs hypothesis/reference lists of equal, non-zero length."""


class EmptyInput(ScaleError):
    """perplexity needs at least one token log-probability."""


class EmptyAlignment(ScaleError):
    """non_monotonicity needs at least one alignment pair."""


class ScorerUnavailable(ScaleError):
    """External scoring endpoint unreachable after retries."""


class ScorerProtocolError(ScaleError):
    """External scoring endpoint answered with an invalid message."""


# ---------------------------------------------------------------------------
# Tokenization shared by chrF++ word n-grams
# ---------------------------------------------------------------------------


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def words_with_punct_split(text: str) -> list[str]:
    """Whitespace tokens with leading/trailing punctuation peeled off as
    separate single-character tokens: ``"(hi!)"`` -> ``["(", "hi", "!", ")"]``.
    """
    out: list[str] = []
    for raw in text.split():
        start, end = 0, len(raw)
        lead: list[str] = []
        trail: list[str] = []
        while start < end and _is_punct(raw[start]):
            lead.append(raw[start])
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            trail.append(raw[end - 1])
            end -= 1
        out.extend(lead)
        if end > start:
            out.append(raw[start:end])
        out.extend(reversed(trail))
    return out


def _char_ngrams(text: str, order: int) -> Counter:
    return Counter(text[i : i + order] for i in range(len(text) - order + 1))


def _ngrams(tokens: Sequence[str], order: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1)
    )


def _strip_whitespace(text: str) -> str:
    return "".join(text.split())


# ---------------------------------------------------------------------------
# Lexical metrics
# ---------------------------------------------------------------------------


def chrf_pp(
    hypothesis: str,
    reference: str,
    char_order: int = 6,
    word_order: int = 2,
    beta: float = 2.0,
) -> float:
    """Character n-gram F-score with added word n-grams, in [0, 100].

    Character n-grams (orders 1..char_order) are counted on the string with
    all whitespace removed; word n-grams (orders 1..word_order) use
    ``words_with_punct_split`` tokens. For each order the clipped-match
    precision and recall are computed; orders where both sides have zero
    n-grams are skipped, and a side with zero n-grams scores 0 for its
    ratio. The final score is the F_beta of the order-averaged precision
    and recall, or 0 when both averages are 0.
    """
    if reference == "":
        raise EmptyReference("reference must be non-empty")
    hyp_chars = _strip_whitespace(hypothesis)
    ref_chars = _strip_whitespace(reference)
    hyp_words = words_with_punct_split(hypothesis)
    ref_words = words_with_punct_split(reference)

    precisions: list[float] = []
    recalls: list[float] = []

    def add_order(hyp_counts: Counter, ref_counts: Counter) -> None:
        hyp_total = sum(hyp_counts.values())
        ref_total = sum(ref_counts.values())
        if hyp_total == 0 and ref_total == 0:
            return
        matched = sum(min(count, ref_counts[gram]) for gram, count in hyp_counts.items())
        precisions.append(matched / hyp_total if hyp_total else 0.0)
        recalls.append(matched / ref_total if ref_total else 0.0)

    for order in range(1, char_order + 1):
        add_order(_char_ngrams(hyp_chars, order), _char_ngrams(ref_chars, order))
    for order in range(1, word_order + 1):
        add_order(_ngrams(hyp_words, order), _ngrams(ref_words, order))

    if not precisions:
        return 0.0
    avg_p = sum(precisions) / len(precisions)
    avg_r = sum(recalls) / len(recalls)
    if avg_p + avg_r == 0.0:
        return 0.0
    beta_sq = beta * beta
    return 100.0 * (1.0 + beta_sq) * avg_p * avg_r / (beta_sq * avg_p + avg_r)


def corpus_bleu(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_order: int = 4,
) -> float:
    """Corpus BLEU over caller-supplied token lists, in [0, 100].

    Modified n-gram precisions are pooled over the whole corpus, combined
    by geometric mean, and scaled by the brevity penalty
    ``min(1, e^(1 - r/c))``. No smoothing: a zero precision at any order
    gives 0. Tokenization is entirely the caller's business, which is what
    makes this reusable for subword-level scoring.
    """
    if len(hypotheses) != len(references) or len(hypotheses) == 0:
        raise LengthMismatch(
            f"need equal, non-zero list lengths; got {len(hypotheses)} and {len(references)}"
        )
    correct = [0] * max_order
    total = [0] * max_order
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = list(hyp)
        ref = list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for order in range(1, max_order + 1):
            hyp_counts = _ngrams(hyp, order)
            ref_counts = _ngrams(ref, order)
            total[order - 1] += sum(hyp_counts.values())
            correct[order - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )
    if any(t == 0 for t in total) or any(c == 0 for c in correct):
        return 0.0
    log_precision = sum(math.log(c / t) for c, t in zip(correct, total)) / max_order
    brevity = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_precision)


def perplexity(token_logprobs: Sequence[float]) -> float:
    """exp of the negative mean token log-probability (natural log)."""
    if not token_logprobs:
        raise EmptyInput("need at least one token log-probability")
    return math.exp(-sum(token_logprobs) / len(token_logprobs))


# ---------------------------------------------------------------------------
# Alignment-based literalness measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentSet:
    """Word-to-word alignment edges between a source of ``m`` words and a
    target of ``n`` words, both 1-based."""

    pairs: frozenset[tuple[int, int]]
    m: int
    n: int

    def __post_init__(self):
        object.__setattr__(
            self, "pairs", frozenset((int(i), int(j)) for i, j in self.pairs)
        )
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")
        for i, j in self.pairs:
            if not (1 <= i <= self.m and 1 <= j <= self.n):
                raise ValueError(f"alignment pair ({i}, {j}) out of bounds for m={self.m}, n={self.n}")

    def to_dict(self) -> dict[str, Any]:
        return {"pairs": sorted([i, j] for i, j in self.pairs), "m": self.m, "n": self.n}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AlignmentSet":
        return cls(
            pairs=frozenset((p[0], p[1]) for p in data["pairs"]),
            m=int(data["m"]),
            n=int(data["n"]),
        )


def non_monotonicity(alignment: AlignmentSet) -> float:
    """Mean deviation of alignment edges from the diagonal, in [0, 1]:
    mean over pairs of |i/m - j/n|. Higher means less literal word order."""
    if not alignment.pairs:
        raise EmptyAlignment("alignment has no pairs")
    total = sum(
        abs(i / alignment.m - j / alignment.n) for i, j in alignment.pairs
    )
    return total / len(alignment.pairs)


def unaligned_source_words(alignment: AlignmentSet) -> float:
    """Fraction of source word positions with no alignment edge, in [0, 1]."""
    aligned = {i for i, _ in alignment.pairs}
    return sum(1 for i in range(1, alignment.m + 1) if i not in aligned) / alignment.m


# ---------------------------------------------------------------------------
# Per-segment score container
# ---------------------------------------------------------------------------


@dataclass
class SegmentScores:
    chrfpp: float | None = None
    bleu: float | None = None
    ppl: float | None = None
    nm: float | None = None
    usw: float | None = None
    external: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "chrfpp": self.chrfpp,
            "bleu": self.bleu,
            "ppl": self.ppl,
            "nm": self.nm,
            "usw": self.usw,
            "external": dict(self.external),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SegmentScores":
        return cls(
            chrfpp=data.get("chrfpp"),
            bleu=data.get("bleu"),
            ppl=data.get("ppl"),
            nm=data.get("nm"),
            usw=data.get("usw"),
            external=dict(data.get("external", {})),
        )


# ---------------------------------------------------------------------------
# External scoring / alignment / LM endpoints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoringEndpointConfig:
    """A scoring-style endpoint (neural scorer, word aligner, or LM)."""

    base_url: str
    timeout_ms: int = 30000
    max_retries: int = 2
    api_key: str | None = None

    def __post_init__(self):
        if not self.base_url.startswith(("http://", "https://")):
            raise ValueError(f"base_url must be an absolute http(s) URL: {self.base_url!r}")


def _call(endpoint: ScoringEndpointConfig, path: str, body: dict[str, Any]) -> dict[str, Any]:
    try:
        data, _ = post_json(
            endpoint.base_url.rstrip("/") + path,
            body,
            timeout_s=endpoint.timeout_ms / 1000.0,
            max_retries=endpoint.max_retries,
            api_key=endpoint.api_key,
        )
        return data
    except TransportFailure as exc:
        raise ScorerUnavailable(str(exc)) from exc
    except (EndpointRejected, MalformedResponse) as exc:
        raise ScorerProtocolError(str(exc)) from exc


def score_external(
    endpoint: ScoringEndpointConfig, src: str, hyp: str, ref: str | None = None
) -> float:
    """POST /score {"src", "hyp", "ref"} -> the scorer's scalar, verbatim.

    Reference-free scorers are called with ``ref`` null. Non-numeric or
    non-finite scores are protocol errors.
    """
    data = _call(endpoint, "/score", {"src": src, "hyp": hyp, "ref": ref})
    score = data.get("score")
    if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
        raise ScorerProtocolError(f"scorer returned a non-finite score: {score!r}")
    return float(score)


def fetch_alignment(endpoint: ScoringEndpointConfig, src: str, tgt: str) -> AlignmentSet:
    """POST /align {"src", "tgt"} -> {"pairs": [[i, j], ...], "m": ..., "n": ...}."""
    data = _call(endpoint, "/align", {"src": src, "tgt": tgt})
    try:
        return AlignmentSet.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScorerProtocolError(f"invalid alignment response: {exc}") from exc


def fetch_token_logprobs(endpoint: ScoringEndpointConfig, text: str) -> list[float]:
    """POST /logprobs {"text"} -> {"token_logprobs": [...]} from a language
    model endpoint; used to compute fluency perplexity over the LM's own
    token stream."""
    data = _call(endpoint, "/logprobs", {"text": text})
    logprobs = data.get("token_logprobs")
    if not isinstance(logprobs, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
        for x in logprobs
    ):
        raise ScorerProtocolError("response must carry a list of finite token_logprobs")
    return [float(x) for x in logprobs]
