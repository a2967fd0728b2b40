from __future__ import annotations

import math
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_draft, system_of, user_of
from scale_mt.core import DemonstrationTriplet, Draft, DraftSet, TranslationJob
from scale_mt.llm_client import ChatMessage
from scale_mt.prompt_builder import (
    EmptyDraftSet,
    MissingTokenProbs,
    annotate_confidence,
    build_fewshot_prompt,
    build_scale_prompt,
    parse_chatml,
    render_block,
    render_example_block,
    serialize_chatml,
)

CONF_RE = re.compile(r"\(\d\.\d\d\)")


def _job(tags, mode="refine", shots=2, paths=1, confidence=True, pivot=None):
    return TranslationJob(
        id="j",
        source_lang=tags["xho_Latn"] if mode != "pivot" else tags["lao_Laoo"],
        target_lang=tags["eng_Latn"] if mode != "pivot" else tags["deu_Latn"],
        source_text="Indlovu iyasela." if mode != "pivot" else "ຊ້າງ ດື່ມ.",
        mode=mode,
        shots=shots,
        num_paths=paths,
        include_confidence=confidence,
        pivot_lang=pivot,
    )


def _draftset(*texts_probs) -> DraftSet:
    return DraftSet.from_paths([make_draft(t, p) for t, p in texts_probs], "stm-x", 0.0)


def _triplet(source="S one.", target="T one.", drafts=None) -> DemonstrationTriplet:
    return DemonstrationTriplet(
        source, drafts or _draftset(("D one.", [0.9, 0.8])), target
    )


# ---------------------------------------------------------------------------
# confidence annotation
# ---------------------------------------------------------------------------


def test_annotate_confidence_format():
    draft = Draft(
        "The cat", (("The", 0.984), ("cat", 0.5)), math.log(0.984) + math.log(0.5)
    )
    assert annotate_confidence(draft) == "The(0.98) cat(0.50)"


def test_annotate_confidence_single_certain_token():
    assert annotate_confidence(Draft("a", (("a", 1.0),), 0.0)) == "a(1.00)"


def test_annotate_confidence_rounds_half_up():
    draft = Draft("x y", (("x", 0.985), ("y", 0.125)), math.log(0.985) + math.log(0.125))
    assert annotate_confidence(draft) == "x(0.99) y(0.13)"


def test_annotate_confidence_requires_tokens():
    with pytest.raises(MissingTokenProbs):
        annotate_confidence(Draft("bare", (), -1.0))


# ---------------------------------------------------------------------------
# block rendering
# ---------------------------------------------------------------------------


def test_render_block_two_drafts_no_confidence():
    drafts = _draftset(("D1.", [0.9]), ("D2.", [0.5]))
    block = render_example_block(_triplet(drafts=drafts), include_confidence=False)
    assert block.split("\n") == [
        "Source: S one.",
        "Potentially useful reference answer 1: D1.",
        "Potentially useful reference answer 2: D2.",
        "Target: T one.",
    ]


def test_render_block_confidence_composition():
    drafts = _draftset(("The cat", [0.984, 0.5]),)
    block = render_example_block(_triplet(drafts=drafts), include_confidence=True)
    assert "Potentially useful reference answer 1: The(0.98) cat(0.50)" in block


def test_render_block_direct_pair():
    assert render_block("S.", target="T.") == "Source: S.\nTarget: T."


def test_render_block_alignment_truncates_and_repeats():
    drafts = _draftset(("D1.", [0.9]), ("D2.", [0.5]))
    truncated = render_example_block(_triplet(drafts=drafts), False, num_paths=1)
    assert truncated.count("reference answer") == 1
    assert "D1." in truncated and "D2." not in truncated
    padded = render_example_block(_triplet(drafts=drafts), False, num_paths=4)
    assert padded.count("reference answer") == 4
    assert padded.count("D2.") == 3  # last draft repeated


# ---------------------------------------------------------------------------
# chatml serialization
# ---------------------------------------------------------------------------


def test_serialize_single_system():
    assert serialize_chatml([ChatMessage("system", "S")]) == "<|im_start|>system\nS\n<|im_end|>\n"


def test_serialize_final_assistant_open():
    out = serialize_chatml([ChatMessage("system", "S"), ChatMessage("assistant", "Target:")])
    assert out.endswith("<|im_start|>assistant\nTarget:")
    assert not out.endswith("<|im_end|>\n")


def test_serialize_empty():
    assert serialize_chatml([]) == ""


@given(
    st.lists(
        st.tuples(
            st.sampled_from(["system", "user", "assistant"]),
            st.text(
                alphabet=st.characters(blacklist_characters="<|>", blacklist_categories=("Cs",)),
                min_size=1,
                max_size=40,
            ),
        ),
        min_size=1,
        max_size=6,
    )
)
@settings(max_examples=100, deadline=None)
def test_chatml_roundtrip(pairs):
    messages = [ChatMessage(role, content) for role, content in pairs]
    assert parse_chatml(serialize_chatml(messages)) == messages


# ---------------------------------------------------------------------------
# fewshot builder
# ---------------------------------------------------------------------------


def test_fewshot_zero_shot_user_is_bare_source(tags):
    bundle = build_fewshot_prompt(_job(tags, mode="direct", shots=0), [])
    assert user_of(bundle) == "Source: Indlovu iyasela."
    assert bundle.shots_used == 0
    assert bundle.messages[-1].content == "Target:"


def test_fewshot_two_shots(tags):
    demos = [("S1.", "T1."), ("S2.", "T2.")]
    bundle = build_fewshot_prompt(_job(tags, mode="direct"), demos)
    user = user_of(bundle)
    assert user.count("\nTarget: ") == 2
    assert user.endswith("Source: Indlovu iyasela.")
    assert bundle.shots_used == 2


def test_fewshot_system_line(tags):
    bundle = build_fewshot_prompt(_job(tags, mode="direct", shots=0), [])
    assert system_of(bundle) == (
        "Assistant is an intelligent chatbot designed to help users translate "
        "from Xhosa to English"
    )


def test_fewshot_requires_direct(tags):
    with pytest.raises(ValueError):
        build_fewshot_prompt(_job(tags, mode="refine"), [])


@given(st.integers(min_value=0, max_value=8))
@settings(max_examples=20, deadline=None)
def test_fewshot_target_count_matches_shots(k):
    from scale_mt.core import LanguageTag

    job = TranslationJob(
        id="j",
        source_lang=LanguageTag("xho_Latn", "Xhosa"),
        target_lang=LanguageTag("eng_Latn", "English"),
        source_text="umzekelo",
        mode="direct",
        shots=k,
    )
    demos = [(f"src {i}", f"tgt {i}") for i in range(k)]
    user = user_of(build_fewshot_prompt(job, demos))
    assert user.count("\nTarget: ") == k


# ---------------------------------------------------------------------------
# draft-guided builder
# ---------------------------------------------------------------------------


def test_scale_confidence_off_system_and_lines(tags):
    drafts = _draftset(("Plain draft.", [0.9, 0.8]))
    bundle = build_scale_prompt(_job(tags, confidence=False, shots=1), [_triplet()], drafts)
    system = system_of(bundle)
    assert "confidence" not in system
    assert system.endswith("from a fine-tuned model")
    assert not CONF_RE.search(user_of(bundle))


def test_scale_confidence_on_system(tags):
    drafts = _draftset(("D.", [0.9]))
    bundle = build_scale_prompt(_job(tags, shots=0), [], drafts)
    assert system_of(bundle) == (
        "Assistant is an intelligent chatbot designed to help users translate "
        "from Xhosa to English\n"
        "\n"
        "Context:\n"
        "- Assistant would be given a potentially useful reference answer "
        "from a fine-tuned model\n"
        "- The number in brackets denotes the confidence score of a fine-tuned "
        "model to generate the token."
    )


def test_scale_zero_shot_one_draft_two_lines(tags):
    drafts = _draftset(("D.", [0.9]))
    bundle = build_scale_prompt(_job(tags, shots=0), [], drafts)
    lines = user_of(bundle).split("\n")
    assert len(lines) == 2
    assert lines[0].startswith("Source: ")
    assert lines[1].startswith("Potentially useful reference answer 1: ")


def test_scale_pivot_prompt(tags):
    job = _job(tags, mode="pivot", shots=1, pivot=tags["eng_Latn"])
    demo = DemonstrationTriplet(
        "ຊ້າງ ໃຫຍ່.", _draftset(("The big elephant.", [0.9, 0.8, 0.85])), "Der große Elefant."
    )
    drafts = _draftset(("The elephant drinks.", [0.9, 0.8, 0.85]))
    bundle = build_scale_prompt(job, [demo], drafts)
    system = system_of(bundle)
    assert "translate from Lao to German" in system
    assert "reference answer in English from a fine-tuned model" in system
    user = user_of(bundle)
    assert "Potentially useful reference answer 1: The(0.90)" in user
    assert "Target: Der große Elefant." in user


def test_scale_empty_draftset(tags):
    with pytest.raises(EmptyDraftSet):
        build_scale_prompt(_job(tags), [], DraftSet((), "m"))


def test_scale_rejects_direct(tags):
    with pytest.raises(ValueError):
        build_scale_prompt(_job(tags, mode="direct"), [], _draftset(("D.", [0.9])))


def test_determinism_and_bundle_invariant(tags):
    drafts = _draftset(("D one.", [0.9, 0.8]))
    job = _job(tags, shots=1)
    a = build_scale_prompt(job, [_triplet()], drafts)
    b = build_scale_prompt(job, [_triplet()], drafts)
    assert a.chatml == b.chatml
    assert a.chatml == serialize_chatml(a.messages)
    assert a.paths_used == 1 and a.shots_used == 1


def test_every_demo_draft_appears_exactly_once_confidence_off(tags):
    # Demos with exactly P distinct drafts each.
    p = 2
    demos = [
        _triplet("S a.", "T a.", _draftset(("Da1.", [0.9]), ("Da2.", [0.5]))),
        _triplet("S b.", "T b.", _draftset(("Db1.", [0.8]), ("Db2.", [0.4]))),
    ]
    test_drafts = _draftset(("X1.", [0.9]), ("X2.", [0.7]))
    bundle = build_scale_prompt(_job(tags, confidence=False, shots=2, paths=p), demos, test_drafts)
    for text in ["Da1.", "Da2.", "Db1.", "Db2."]:
        assert bundle.chatml.count(text) == 1
