"""Deterministic prompt assembly for all three translation modes.

Every function here is pure: identical inputs produce byte-identical
ChatML. The canonical template strings live in this module and nowhere
else; ``goldens/*.chatml.txt`` pin the exact serialized bytes.

Block shapes rendered into the user message:

    Source: {source}                                  (always)
    Potentially useful reference answer {i}: {draft}  (draft-guided modes)
    Target: {target}                                  (demonstrations only)

When confidence annotation is on, each draft token is rendered as
``token(p)`` with ``p`` rounded half-up to two decimals.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Sequence

from .core import DemonstrationTriplet, Draft, DraftSet, ScaleError, TranslationJob
from .llm_client import ChatMessage

#: Bumped whenever template bytes change, so persisted caches keyed on it
#: invalidate themselves.
TEMPLATE_VERSION = "chatml-templates/1"

SYSTEM_BASE = (
    "Assistant is an intelligent chatbot designed to help users translate from {src} to {tgt}"
)
REFERENCE_BULLET = (
    "- Assistant would be given a potentially useful reference answer from a fine-tuned model"
)
REFERENCE_BULLET_PIVOT = (
    "- Assistant would be given a potentially useful reference answer in {pivot} "
    "from a fine-tuned model"
)
CONFIDENCE_BULLET = (
    "- The number in brackets denotes the confidence score of a fine-tuned model "
    "to generate the token."
)
ANSWER_LINE = "Potentially useful reference answer {i}: {text}"


class MissingTokenProbs(ScaleError):
    """Confidence annotation requested for a draft without token probabilities."""


class EmptyDraftSet(ScaleError):
    """A draft-guided prompt needs at least one test draft."""


@dataclass(frozen=True)
class PromptBundle:
    """Ordered chat messages plus their canonical ChatML serialization."""

    messages: tuple[ChatMessage, ...]
    chatml: str
    mode: str
    shots_used: int
    paths_used: int

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if self.chatml != serialize_chatml(self.messages):
            raise ValueError("chatml is not the canonical serialization of messages")

    def to_dict(self) -> dict[str, Any]:
        return {
            "messages": [m.to_dict() for m in self.messages],
            "chatml": self.chatml,
            "mode": self.mode,
            "shots_used": self.shots_used,
            "paths_used": self.paths_used,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PromptBundle":
        return cls(
            messages=tuple(ChatMessage.from_dict(m) for m in data["messages"]),
            chatml=data["chatml"],
            mode=data["mode"],
            shots_used=int(data["shots_used"]),
            paths_used=int(data["paths_used"]),
        )


def _round2(prob: float) -> str:
    # Half-up, always two decimals: 0.985 -> "0.99", 1 -> "1.00".
    return str(Decimal(repr(prob)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def annotate_confidence(draft: Draft) -> str:
    """Render a draft as space-joined ``token(prob)`` pairs."""
    if not draft.tokens:
        raise MissingTokenProbs(
            "draft has no token probabilities; request them from the STM or "
            "turn confidence annotation off"
        )
    return " ".join(f"{tok}({_round2(prob)})" for tok, prob in draft.tokens)


def render_block(
    source: str,
    *,
    drafts: DraftSet | None = None,
    target: str | None = None,
    include_confidence: bool = False,
    num_paths: int | None = None,
) -> str:
    """Render one prompt block.

    With ``num_paths`` set, the draft list is aligned to exactly that many
    reference lines: extra drafts are truncated, missing ones are filled by
    repeating the last draft. This keeps every example in a prompt the same
    shape.
    """
    lines = [f"Source: {source}"]
    if drafts is not None:
        chosen = list(drafts.drafts)
        if num_paths is not None and chosen:
            if len(chosen) > num_paths:
                chosen = chosen[:num_paths]
            elif len(chosen) < num_paths:
                chosen = chosen + [chosen[-1]] * (num_paths - len(chosen))
        for i, draft in enumerate(chosen, start=1):
            text = annotate_confidence(draft) if include_confidence else draft.text
            lines.append(ANSWER_LINE.format(i=i, text=text))
    if target is not None:
        lines.append(f"Target: {target}")
    return "\n".join(lines)


def render_example_block(
    triplet: DemonstrationTriplet,
    include_confidence: bool,
    num_paths: int | None = None,
) -> str:
    """Render a (source, drafts, target) demonstration block."""
    return render_block(
        triplet.source,
        drafts=triplet.drafts,
        target=triplet.target,
        include_confidence=include_confidence,
        num_paths=num_paths,
    )


def serialize_chatml(messages: Sequence[ChatMessage]) -> str:
    """Canonical ChatML: every message is closed except a final assistant
    message, which stays open as the generation slot."""
    parts = []
    last = len(messages) - 1
    for idx, msg in enumerate(messages):
        if idx == last and msg.role == "assistant":
            parts.append(f"<|im_start|>{msg.role}\n{msg.content}")
        else:
            parts.append(f"<|im_start|>{msg.role}\n{msg.content}\n<|im_end|>\n")
    return "".join(parts)


def parse_chatml(text: str) -> list[ChatMessage]:
    """Inverse of ``serialize_chatml`` for canonical strings."""
    messages = []
    for chunk in text.split("<|im_start|>"):
        if not chunk:
            continue
        role, _, rest = chunk.partition("\n")
        if rest.endswith("\n<|im_end|>\n"):
            content = rest[: -len("\n<|im_end|>\n")]
        else:
            content = rest
        messages.append(ChatMessage(role=role, content=content))
    return messages


def _bundle(
    messages: list[ChatMessage], mode: str, shots_used: int, paths_used: int
) -> PromptBundle:
    return PromptBundle(
        messages=tuple(messages),
        chatml=serialize_chatml(messages),
        mode=mode,
        shots_used=shots_used,
        paths_used=paths_used,
    )


def build_fewshot_prompt(
    job: TranslationJob, demos: Sequence[tuple[str, str]]
) -> PromptBundle:
    """Plain source/target few-shot prompt (direct mode)."""
    if job.mode != "direct":
        raise ValueError(f"fewshot prompt requires direct mode, got {job.mode!r}")
    blocks = [render_block(src, target=tgt) for src, tgt in demos]
    blocks.append(render_block(job.source_text))
    messages = [
        ChatMessage(
            "system",
            SYSTEM_BASE.format(
                src=job.source_lang.display_name, tgt=job.target_lang.display_name
            ),
        ),
        ChatMessage("user", "\n".join(blocks)),
        ChatMessage("assistant", "Target:"),
    ]
    return _bundle(messages, mode="direct", shots_used=len(demos), paths_used=0)


def _scale_system(job: TranslationJob) -> str:
    base = SYSTEM_BASE.format(
        src=job.source_lang.display_name, tgt=job.target_lang.display_name
    )
    if job.mode == "pivot":
        reference = REFERENCE_BULLET_PIVOT.format(pivot=job.pivot_lang.display_name)
    else:
        reference = REFERENCE_BULLET
    lines = [base, "", "Context:", reference]
    if job.include_confidence:
        lines.append(CONFIDENCE_BULLET)
    return "\n".join(lines)


def build_scale_prompt(
    job: TranslationJob,
    demos: Sequence[DemonstrationTriplet],
    test_drafts: DraftSet,
) -> PromptBundle:
    """Draft-guided prompt (refine and pivot modes).

    Every demonstration is aligned to the test draft count so all blocks
    carry the same number of reference-answer lines. The test block has no
    ``Target:`` line; the assistant message opens the generation slot.
    """
    if job.mode not in ("refine", "pivot"):
        raise ValueError(f"draft-guided prompt requires refine/pivot mode, got {job.mode!r}")
    if not test_drafts.drafts:
        raise EmptyDraftSet("test draft set is empty")
    paths = len(test_drafts.drafts)
    blocks = [
        render_example_block(demo, job.include_confidence, num_paths=paths)
        for demo in demos
    ]
    blocks.append(
        render_block(
            job.source_text,
            drafts=test_drafts,
            include_confidence=job.include_confidence,
        )
    )
    messages = [
        ChatMessage("system", _scale_system(job)),
        ChatMessage("user", "\n".join(blocks)),
        ChatMessage("assistant", "Target:"),
    ]
    return _bundle(messages, mode=job.mode, shots_used=len(demos), paths_used=paths)
