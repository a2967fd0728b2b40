"""Draft-guided machine translation gateway.

A compact specialized translation model proposes draft translations with
token-level confidences; a general chat LLM refines them (or pivots through
a high-resource language) guided by triplet in-context demonstrations. The
package also ships the evaluation harness, lexical metrics, scripted mock
servers, and an HTTP service wrapper.
"""

from .core import (
    DemonstrationTriplet,
    Draft,
    DraftSet,
    InvalidJob,
    LanguageTag,
    MalformedTag,
    ScaleError,
    TranslationJob,
    UnknownLanguage,
    job_from_dict,
    load_language_registry,
    parse_language_tag,
    validate_job,
)
from .demo_store import (
    DemoPool,
    DraftCacheKey,
    PoolParseError,
    bm25_score,
    load_pool,
    select_demonstrations,
)
from .engine import (
    Engine,
    EngineConfig,
    EngineDefaults,
    LatencyRecord,
    PivotNotConfigured,
    TranslationResult,
    aggregate_latency,
    cache_key,
)
from .harness import (
    DatasetRecord,
    EvalOptions,
    EvaluationReport,
    RunFailed,
    analyze_report,
    bench_latency,
    load_dataset,
    run_evaluate,
)
from .llm_client import ChatMessage, LlmEndpointConfig, complete_chat
from .metrics import (
    AlignmentSet,
    ScoringEndpointConfig,
    SegmentScores,
    chrf_pp,
    corpus_bleu,
    non_monotonicity,
    perplexity,
    score_external,
    unaligned_source_words,
)
from .mockserv import MockServer, serve_mock
from .prompt_builder import (
    PromptBundle,
    annotate_confidence,
    build_fewshot_prompt,
    build_scale_prompt,
    render_example_block,
    serialize_chatml,
)
from .service import EngineServer
from .stm_client import StmEndpointConfig, dedup_paths, request_drafts

__version__ = "0.1.0"

__all__ = [
    "AlignmentSet",
    "ChatMessage",
    "DatasetRecord",
    "DemoPool",
    "DemonstrationTriplet",
    "Draft",
    "DraftCacheKey",
    "DraftSet",
    "Engine",
    "EngineConfig",
    "EngineDefaults",
    "EngineServer",
    "EvalOptions",
    "EvaluationReport",
    "InvalidJob",
    "LanguageTag",
    "LatencyRecord",
    "LlmEndpointConfig",
    "MalformedTag",
    "MockServer",
    "PivotNotConfigured",
    "PoolParseError",
    "PromptBundle",
    "RunFailed",
    "ScaleError",
    "ScoringEndpointConfig",
    "SegmentScores",
    "StmEndpointConfig",
    "TranslationJob",
    "TranslationResult",
    "UnknownLanguage",
    "aggregate_latency",
    "analyze_report",
    "annotate_confidence",
    "bench_latency",
    "bm25_score",
    "build_fewshot_prompt",
    "build_scale_prompt",
    "cache_key",
    "chrf_pp",
    "complete_chat",
    "corpus_bleu",
    "dedup_paths",
    "job_from_dict",
    "load_dataset",
    "load_language_registry",
    "load_pool",
    "non_monotonicity",
    "parse_language_tag",
    "perplexity",
    "render_example_block",
    "request_drafts",
    "run_evaluate",
    "score_external",
    "select_demonstrations",
    "serialize_chatml",
    "serve_mock",
    "unaligned_source_words",
    "validate_job",
]
