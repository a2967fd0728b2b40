"""End-to-end orchestration of one translation per mode.

The engine snapshots its endpoint configuration atomically per job, so the
STM can be hot-swapped mid-run without any job mixing models. Results are
cached on disk (one JSON file per content-hash key, written atomically),
and latency is decomposed into explicitly measured STM / LLM / overhead
components whose sum is the total by construction.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np

from .core import (
    DemonstrationTriplet,
    DraftSet,
    InvalidJob,
    ScaleError,
    TranslationJob,
    validate_job,
)
from .demo_store import DemoPool, DraftCacheKey, PoolEntry, select_demonstration_indices
from .http_util import canonical_json
from .llm_client import LlmEndpointConfig, complete_chat
from .prompt_builder import (
    TEMPLATE_VERSION,
    PromptBundle,
    build_fewshot_prompt,
    build_scale_prompt,
)
from .stm_client import StmEndpointConfig, request_drafts


class PivotNotConfigured(ScaleError):
    """Pivot-mode job on an engine without a pivot STM endpoint."""


class EmptyRecordSet(ScaleError):
    """aggregate_latency needs at least one record."""


@dataclass(frozen=True)
class EngineDefaults:
    shots: int = 10
    num_paths: int = 1
    include_confidence: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "shots": self.shots,
            "num_paths": self.num_paths,
            "include_confidence": self.include_confidence,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EngineDefaults":
        return cls(
            shots=int(data.get("shots", 10)),
            num_paths=int(data.get("num_paths", 1)),
            include_confidence=bool(data.get("include_confidence", True)),
        )


@dataclass(frozen=True)
class EngineConfig:
    stm: StmEndpointConfig
    llm: LlmEndpointConfig
    stm_pivot: StmEndpointConfig | None = None
    defaults: EngineDefaults = EngineDefaults()
    cache_dir: str | None = None

    def __post_init__(self):
        if self.defaults.shots < 0:
            raise ValueError("defaults.shots must be >= 0")

    def to_dict(self, redact_secrets: bool = False) -> dict[str, Any]:
        return {
            "stm": self.stm.to_dict(redact_secrets),
            "stm_pivot": self.stm_pivot.to_dict(redact_secrets) if self.stm_pivot else None,
            "llm": self.llm.to_dict(redact_secrets),
            "defaults": self.defaults.to_dict(),
            "cache_dir": self.cache_dir,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EngineConfig":
        return cls(
            stm=StmEndpointConfig.from_dict(data["stm"]),
            llm=LlmEndpointConfig.from_dict(data["llm"]),
            stm_pivot=(
                StmEndpointConfig.from_dict(data["stm_pivot"])
                if data.get("stm_pivot")
                else None
            ),
            defaults=EngineDefaults.from_dict(data.get("defaults", {})),
            cache_dir=data.get("cache_dir"),
        )


@dataclass(frozen=True)
class LatencyRecord:
    """Per-job latency decomposition; total is the component sum, exactly."""

    stm_ms: float
    llm_ms: float
    overhead_ms: float
    total_ms: float
    prompt_length_tokens: int

    def __post_init__(self):
        if min(self.stm_ms, self.llm_ms, self.overhead_ms) < 0:
            raise ValueError("latency components must be >= 0")
        if self.prompt_length_tokens < 0:
            raise ValueError("prompt_length_tokens must be >= 0")
        if self.total_ms != self.stm_ms + self.llm_ms + self.overhead_ms:
            raise ValueError("total_ms must equal stm_ms + llm_ms + overhead_ms")

    @classmethod
    def build(
        cls, stm_ms: float, llm_ms: float, overhead_ms: float, prompt_length_tokens: int
    ) -> "LatencyRecord":
        return cls(
            stm_ms=stm_ms,
            llm_ms=llm_ms,
            overhead_ms=overhead_ms,
            total_ms=stm_ms + llm_ms + overhead_ms,
            prompt_length_tokens=prompt_length_tokens,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "stm_ms": self.stm_ms,
            "llm_ms": self.llm_ms,
            "overhead_ms": self.overhead_ms,
            "total_ms": self.total_ms,
            "prompt_length_tokens": self.prompt_length_tokens,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LatencyRecord":
        return cls(
            stm_ms=float(data["stm_ms"]),
            llm_ms=float(data["llm_ms"]),
            overhead_ms=float(data["overhead_ms"]),
            total_ms=float(data["total_ms"]),
            prompt_length_tokens=int(data["prompt_length_tokens"]),
        )


@dataclass(frozen=True)
class TranslationResult:
    job_id: str
    output_text: str
    drafts: DraftSet
    prompt: PromptBundle
    latency: LatencyRecord
    cache_hit: bool
    stm_model_id: str  # "" in direct mode
    llm_model_id: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "job_id": self.job_id,
            "output_text": self.output_text,
            "drafts": self.drafts.to_dict(),
            "prompt": self.prompt.to_dict(),
            "latency": self.latency.to_dict(),
            "cache_hit": self.cache_hit,
            "stm_model_id": self.stm_model_id,
            "llm_model_id": self.llm_model_id,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TranslationResult":
        return cls(
            job_id=data["job_id"],
            output_text=data["output_text"],
            drafts=DraftSet.from_dict(data["drafts"]),
            prompt=PromptBundle.from_dict(data["prompt"]),
            latency=LatencyRecord.from_dict(data["latency"]),
            cache_hit=bool(data["cache_hit"]),
            stm_model_id=data["stm_model_id"],
            llm_model_id=data["llm_model_id"],
        )


def cache_key(job: TranslationJob, config: EngineConfig) -> str:
    """Stable content hash over everything that determines the output."""
    if job.mode == "pivot":
        stm = config.stm_pivot
    elif job.mode == "refine":
        stm = config.stm
    else:
        stm = None
    payload = {
        "template_version": TEMPLATE_VERSION,
        "mode": job.mode,
        "source_text": job.source_text,
        "source_lang": job.source_lang.code,
        "target_lang": job.target_lang.code,
        "pivot_lang": job.pivot_lang.code if job.pivot_lang else None,
        "shots": job.shots,
        "num_paths": job.num_paths,
        "include_confidence": job.include_confidence,
        "stm_model_id": stm.model_id if stm else None,
        "stm_sampling": stm.sampling if stm else None,
        "stm_temperature": stm.temperature if stm else None,
        "llm_model_id": config.llm.model_id,
        "llm_temperature": config.llm.temperature,
        "llm_max_tokens": config.llm.max_tokens,
        "llm_stop": list(config.llm.stop_sequences),
    }
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def aggregate_latency(records: Sequence[LatencyRecord]) -> dict[str, float]:
    """Arithmetic means of the latency components across records."""
    if not records:
        raise EmptyRecordSet("no latency records to aggregate")
    return {
        "mean_stm_ms": float(np.mean([r.stm_ms for r in records])),
        "mean_llm_ms": float(np.mean([r.llm_ms for r in records])),
        "mean_total_ms": float(np.mean([r.total_ms for r in records])),
        "mean_prompt_tokens": float(np.mean([r.prompt_length_tokens for r in records])),
    }


class _Stopwatch:
    """Accumulates elapsed milliseconds across several ``with`` blocks."""

    def __init__(self):
        self.ms = 0.0

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms += (time.perf_counter() - self._t0) * 1000.0
        return False


class Engine:
    """Thread-safe translation orchestrator.

    Concurrent ``translate`` calls each take one atomic snapshot of the
    endpoint configuration at start and use it throughout; ``update_stm``
    swaps the STM for jobs that start afterwards.
    """

    def __init__(self, config: EngineConfig):
        self._lock = threading.Lock()
        self._stm = config.stm
        self._stm_pivot = config.stm_pivot
        self._llm = config.llm
        self._defaults = config.defaults
        self._cache_dir = config.cache_dir

    def snapshot(self) -> EngineConfig:
        with self._lock:
            return EngineConfig(
                stm=self._stm,
                llm=self._llm,
                stm_pivot=self._stm_pivot,
                defaults=self._defaults,
                cache_dir=self._cache_dir,
            )

    def update_stm(self, new_stm: StmEndpointConfig) -> StmEndpointConfig:
        """Atomically swap the STM endpoint; in-flight jobs keep the config
        they snapshotted. Returns the previous config."""
        with self._lock:
            previous = self._stm
            self._stm = new_stm
            return previous

    # -- persistent result cache -------------------------------------------

    def _cache_path(self, key: str) -> str:
        return os.path.join(self._cache_dir, key + ".json")

    def _cache_load(self, key: str) -> TranslationResult | None:
        if not self._cache_dir:
            return None
        path = self._cache_path(key)
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as fh:
            return TranslationResult.from_dict(json.load(fh))

    def _cache_store(self, key: str, result: TranslationResult) -> None:
        if not self._cache_dir:
            return
        os.makedirs(self._cache_dir, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self._cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(result.to_dict(), fh, ensure_ascii=False)
            os.replace(tmp, self._cache_path(key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # -- translation --------------------------------------------------------

    def translate(self, job: TranslationJob, pool: DemoPool | None = None) -> TranslationResult:
        """Translate one job. Output is the verbatim LLM completion; the
        engine never post-edits it toward a draft."""
        issues = validate_job(job)
        if issues:
            raise InvalidJob(issues)
        config = self.snapshot()
        overhead = _Stopwatch()

        with overhead:
            key = cache_key(job, config)
            cached = self._cache_load(key)
        if cached is not None:
            return replace(
                cached,
                cache_hit=True,
                latency=LatencyRecord.build(
                    0.0, 0.0, overhead.ms, cached.latency.prompt_length_tokens
                ),
            )

        stm_ms = 0.0
        if job.mode == "direct":
            with overhead:
                demo_indices = self._select(pool, job)
                demos = [pool.entries[i] for i in demo_indices] if demo_indices else []
                bundle = build_fewshot_prompt(job, [(e.source, e.target) for e in demos])
                drafts = DraftSet((), stm_model_id="", stm_latency_ms=0.0)
                stm_model_id = ""
        else:
            if job.mode == "pivot":
                stm_cfg = config.stm_pivot
                if stm_cfg is None:
                    raise PivotNotConfigured("pivot job needs an stm_pivot endpoint")
                draft_lang = job.pivot_lang
            else:
                stm_cfg = config.stm
                draft_lang = job.target_lang
            test_drafts = request_drafts(
                stm_cfg,
                job.source_lang,
                draft_lang,
                job.source_text,
                job.num_paths,
                want_token_probs=job.include_confidence,
            )
            stm_ms += test_drafts.stm_latency_ms

            with overhead:
                demo_indices = self._select(pool, job)
            demo_key = DraftCacheKey(
                stm_model_id=stm_cfg.model_id,
                target_lang=draft_lang.code,
                num_paths=job.num_paths,
                sampling=stm_cfg.sampling,
            )
            fetched_ms: list[float] = []

            def fetch(entry: PoolEntry) -> DraftSet:
                fetched = request_drafts(
                    stm_cfg,
                    job.source_lang,
                    draft_lang,
                    entry.source,
                    job.num_paths,
                    want_token_probs=job.include_confidence,
                )
                fetched_ms.append(fetched.stm_latency_ms)
                return fetched

            triplets = [
                DemonstrationTriplet(
                    source=pool.entries[i].source,
                    drafts=pool.get_drafts(i, demo_key, fetch),
                    target=pool.entries[i].target,
                )
                for i in demo_indices
            ]
            stm_ms += sum(fetched_ms)
            with overhead:
                bundle = build_scale_prompt(job, triplets, test_drafts)
            drafts = test_drafts
            stm_model_id = stm_cfg.model_id

        completion = complete_chat(config.llm, bundle.messages)

        latency = LatencyRecord.build(
            stm_ms,
            completion.llm_latency_ms,
            overhead.ms,
            completion.usage["prompt_tokens"],
        )
        result = TranslationResult(
            job_id=job.id,
            output_text=completion.text,
            drafts=drafts,
            prompt=bundle,
            latency=latency,
            cache_hit=False,
            stm_model_id=stm_model_id,
            llm_model_id=config.llm.model_id,
        )
        self._cache_store(key, result)
        return result

    def _select(self, pool: DemoPool | None, job: TranslationJob) -> list[int]:
        if job.shots == 0:
            return []
        if pool is None:
            raise ScaleError("job requests demonstrations but no pool was provided")
        return select_demonstration_indices(pool, job.source_text, job.shots)
