"""Wire-protocol builders shared across the test modules.

Mock scripts are keyed by the canonical-JSON fingerprint of the exact
request body a client will send, so these helpers reproduce the expected
prompts and requests through the public API; any accidental drift in
prompt or request construction shows up as an unscripted-request 404.
"""

from __future__ import annotations

import math
from typing import Any

from scale_mt import (
    DemonstrationTriplet,
    Draft,
    DraftSet,
    TranslationJob,
    build_scale_prompt,
)
from scale_mt.demo_store import DemoPool, select_demonstration_indices
from scale_mt.llm_client import ChatMessage, LlmEndpointConfig, chat_request_body
from scale_mt.prompt_builder import PromptBundle
from scale_mt.stm_client import StmEndpointConfig, translate_request_body


def make_draft(text: str, probs: list[float] | None = None) -> Draft:
    """Draft with whitespace tokens and an exactly consistent seq_logprob."""
    words = text.split()
    if probs is None:
        probs = [0.9] * len(words)
    return Draft(text, tuple(zip(words, probs)), sum(math.log(p) for p in probs))


def wire_path(draft: Draft, include_tokens: bool = True) -> dict[str, Any]:
    return {
        "text": draft.text,
        "tokens": [{"text": t, "prob": p} for t, p in draft.tokens] if include_tokens else [],
        "seq_logprob": draft.seq_logprob,
    }


def stm_response(
    model_id: str, drafts: list[Draft], latency_ms: float = 3.0, include_tokens: bool = True
) -> dict[str, Any]:
    return {
        "model_id": model_id,
        "paths": [wire_path(d, include_tokens) for d in drafts],
        "latency_ms": latency_ms,
    }


def llm_response(
    text: str,
    prompt_tokens: int = 100,
    completion_tokens: int = 12,
    latency_ms: float = 4.0,
) -> dict[str, Any]:
    return {
        "text": text,
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
        "latency_ms": latency_ms,
    }


def stm_entry(
    cfg: StmEndpointConfig,
    job: TranslationJob,
    drafts: list[Draft],
    *,
    draft_lang=None,
    model_id: str | None = None,
) -> tuple[dict[str, Any], dict[str, Any]]:
    """(request_body, response) pair for the job's test-draft request."""
    target = draft_lang if draft_lang is not None else job.target_lang
    body = translate_request_body(
        cfg, job.source_lang, target, job.source_text, job.num_paths, job.include_confidence
    )
    return body, stm_response(model_id or cfg.model_id, drafts)


def llm_entry(
    cfg: LlmEndpointConfig, bundle: PromptBundle, completion: str, prompt_tokens: int = 100
) -> tuple[dict[str, Any], dict[str, Any]]:
    body = chat_request_body(cfg, bundle.messages)
    return body, llm_response(completion, prompt_tokens=prompt_tokens)


def expected_scale_bundle(
    job: TranslationJob, pool: DemoPool | None, test_drafts: list[Draft], stm_model_id: str
) -> PromptBundle:
    """The prompt the engine will build for a refine/pivot job whose demo
    drafts come from the pool's pre-seeded sets."""
    triplets = []
    if job.shots > 0 and pool is not None:
        for i in select_demonstration_indices(pool, job.source_text, job.shots):
            entry = pool.entries[i]
            seeded = entry.preseeded
            drafts = DraftSet(seeded.drafts[: job.num_paths], seeded.stm_model_id, 0.0)
            triplets.append(DemonstrationTriplet(entry.source, drafts, entry.target))
    test_set = DraftSet.from_paths(test_drafts, stm_model_id, 0.0, limit=job.num_paths)
    return build_scale_prompt(job, triplets, test_set)


def system_of(bundle: PromptBundle) -> str:
    return bundle.messages[0].content


def user_of(bundle: PromptBundle) -> str:
    return next(m.content for m in bundle.messages if m.role == "user")


class EvalRig:
    """Mock STM + LLM servers scripted for a whole refine/pivot run.

    For every (id, source_text) the STM answers one draft request and the
    LLM answers the exact prompt the engine will assemble from the pool's
    pre-seeded demonstrations. Drafts are ``Draft {id}.`` and completions
    ``Output {id}.`` unless overridden.
    """

    def __init__(
        self,
        src_tag,
        tgt_tag,
        sources: list[tuple[str, str]],
        pool: DemoPool | None,
        *,
        mode: str = "refine",
        shots: int = 2,
        num_paths: int = 1,
        include_confidence: bool = True,
        pivot_tag=None,
        cache_dir: str | None = None,
        drafts_for=None,
        completion_for=None,
        stm_delay_ms: float = 0.0,
    ):
        from scale_mt.engine import EngineConfig, EngineDefaults
        from scale_mt.mockserv import MockServer, make_script

        import dataclasses

        stm_proto = StmEndpointConfig(
            base_url="http://stm.proto", model_id="stm-a", timeout_ms=5000, max_retries=0
        )
        llm_proto = LlmEndpointConfig(
            base_url="http://llm.proto", model_id="llm-a", timeout_ms=5000, max_retries=0
        )
        draft_lang = pivot_tag if mode == "pivot" else tgt_tag
        self.expected_bundles: dict[str, PromptBundle] = {}
        self.completions: dict[str, str] = {}
        stm_entries, llm_entries = [], []
        for rid, text in sources:
            job = TranslationJob(
                id=rid,
                source_lang=src_tag,
                target_lang=tgt_tag,
                source_text=text,
                mode=mode,
                shots=shots,
                num_paths=num_paths,
                include_confidence=include_confidence,
                pivot_lang=pivot_tag,
            )
            if drafts_for is not None:
                drafts = drafts_for(rid)
            else:
                drafts = [make_draft(f"Draft {rid}.", [0.9, 0.8])]
            completion = (
                completion_for(rid) if completion_for is not None else f"Output {rid}."
            )
            body, response = stm_entry(stm_proto, job, drafts, draft_lang=draft_lang)
            stm_entries.append((body, response))
            bundle = expected_scale_bundle(job, pool if shots > 0 else None, drafts, "stm-a")
            self.expected_bundles[rid] = bundle
            self.completions[rid] = completion
            llm_entries.append(llm_entry(llm_proto, bundle, completion))

        stm_script = make_script(stm_entries)
        if stm_delay_ms:
            for entry in stm_script.values():
                entry.delay_ms = stm_delay_ms
        self.stm = MockServer("stm", stm_script).start()
        self.llm = MockServer("llm", make_script(llm_entries)).start()
        stm_cfg = dataclasses.replace(stm_proto, base_url=self.stm.base_url)
        self.config = EngineConfig(
            stm=stm_cfg if mode != "pivot" else StmEndpointConfig(
                base_url="http://unused.test", model_id="stm-main"
            ),
            stm_pivot=stm_cfg if mode == "pivot" else None,
            llm=dataclasses.replace(llm_proto, base_url=self.llm.base_url),
            defaults=EngineDefaults(),
            cache_dir=cache_dir,
        )

    def close(self):
        self.stm.stop()
        self.llm.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
