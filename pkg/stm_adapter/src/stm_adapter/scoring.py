"""Turning generation scores into per-token probabilities.

The wire protocol reports only content tokens; special/control tokens
(language codes, EOS, padding) are excluded from the token list, and the
reported ``seq_logprob`` is the sum over the reported tokens so that
clients can verify ``sum(ln p) == seq_logprob`` from the response alone.
The full-sequence log-probability including special steps is kept
separately for internal checks against the model's own score tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


class ScoresUnavailable(Exception):
    """Generation ran without score output; token probabilities unknown."""


@dataclass(frozen=True)
class ScoredPath:
    text: str
    tokens: tuple[tuple[str, float], ...]  # content tokens only
    reported_logprob: float  # sum of ln(prob) over the reported tokens
    total_logprob: float  # sum over every generated step, specials included


def extract_token_probs(
    step_logprobs: Sequence[float] | None,
    token_ids: Sequence[int],
    tokenizer,
) -> ScoredPath:
    """Score one generated sequence.

    ``step_logprobs`` are normalized transition scores (natural-log softmax
    probabilities of the emitted token at each step); ``token_ids`` are the
    generated tokens, excluding the decoder start prefix. Iteration stops
    after the first EOS; padding beyond it is never scored.
    """
    if step_logprobs is None:
        raise ScoresUnavailable("generation did not return scores")
    special_ids = set(tokenizer.all_special_ids)
    eos_id = tokenizer.eos_token_id
    tokens: list[tuple[str, float]] = []
    consumed: list[int] = []
    reported = 0.0
    total = 0.0
    for token_id, logprob in zip(token_ids, step_logprobs):
        token_id = int(token_id)
        logprob = float(logprob)
        consumed.append(token_id)
        total += logprob
        if token_id in special_ids:
            if token_id == eos_id:
                break
            continue
        # Clamp float dust above 0 so prob stays in (0, 1] and the reported
        # sum matches ln(prob) exactly.
        clamped = min(logprob, 0.0)
        tokens.append((tokenizer.decode([token_id]), math.exp(clamped)))
        reported += clamped
    text = tokenizer.decode(consumed, skip_special_tokens=True)
    return ScoredPath(
        text=text,
        tokens=tuple(tokens),
        reported_logprob=reported,
        total_logprob=total,
    )
