"""Batch evaluation harness: dataset ingestion, engine-driven runs, metric
computation, report emission (JSON + CSV), and latency benchmarking.

Dataset file format (JSONL), one record per line::

    {"id": "seg-1", "source_lang": "xho_Latn", "target_lang": "eng_Latn",
     "source": "...", "reference": "...",            # reference optional
     "alignments": {"pairs": [[1, 1], ...], "m": 5, "n": 6}}  # optional

Report aggregates are a pure function of the per-segment rows, so a report
can always be checked for self-consistency by recomputing them.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .core import LanguageTag, ScaleError, TranslationJob, parse_language_tag
from .demo_store import DemoPool
from .engine import Engine, LatencyRecord, aggregate_latency
from .metrics import (
    AlignmentSet,
    ScoringEndpointConfig,
    SegmentScores,
    chrf_pp,
    corpus_bleu,
    fetch_alignment,
    fetch_token_logprobs,
    non_monotonicity,
    perplexity,
    score_external,
    unaligned_source_words,
)

#: Documented in every report so downstream consumers know what the nm
#: column means.
NM_FORMULA = "mean |i/m - j/n|"

#: Tokenization used when the harness computes BLEU from plain text.
BLEU_TOKENIZATION = "whitespace"


class DatasetParseError(ScaleError):
    """A dataset line could not be parsed; any malformed line is fatal."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"dataset line {line}: {reason}")
        self.line = line
        self.reason = reason


class RunFailed(ScaleError):
    """More than half of the segments errored; the report is attached."""

    def __init__(self, message: str, report: "EvaluationReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    source_lang: LanguageTag
    target_lang: LanguageTag
    source: str
    reference: str | None = None
    alignments: AlignmentSet | None = None


def load_dataset(path: str, registry: dict[str, str]) -> list[DatasetRecord]:
    """Load a JSONL dataset in file order; duplicate ids are fatal."""
    records: list[DatasetRecord] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(lineno, f"invalid JSON: {exc}") from exc
            try:
                record = DatasetRecord(
                    id=str(data["id"]),
                    source_lang=parse_language_tag(data["source_lang"], registry),
                    target_lang=parse_language_tag(data["target_lang"], registry),
                    source=data["source"],
                    reference=data.get("reference"),
                    alignments=(
                        AlignmentSet.from_dict(data["alignments"])
                        if data.get("alignments")
                        else None
                    ),
                )
            except (KeyError, TypeError, ValueError, ScaleError) as exc:
                raise DatasetParseError(lineno, str(exc)) from exc
            if not record.source:
                raise DatasetParseError(lineno, "'source' must be non-empty")
            if record.id in seen_ids:
                raise DatasetParseError(lineno, f"duplicate id {record.id!r}")
            seen_ids.add(record.id)
            records.append(record)
    if not records:
        raise DatasetParseError(0, "dataset holds no records")
    return records


@dataclass(frozen=True)
class EvalOptions:
    """Per-run knobs: job shape plus optional metric endpoints."""

    mode: str = "refine"
    shots: int = 10
    num_paths: int = 1
    include_confidence: bool = True
    pivot_lang: LanguageTag | None = None
    lm: ScoringEndpointConfig | None = None
    scorers: dict[str, ScoringEndpointConfig] = field(default_factory=dict)
    workers: int = 4

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "shots": self.shots,
            "num_paths": self.num_paths,
            "include_confidence": self.include_confidence,
            "pivot_lang": self.pivot_lang.code if self.pivot_lang else None,
            "lm_url": self.lm.base_url if self.lm else None,
            "scorers": {name: cfg.base_url for name, cfg in self.scorers.items()},
            "workers": self.workers,
        }


@dataclass
class SegmentRow:
    id: str
    source: str = ""
    reference: str | None = None
    output: str | None = None
    prompt_chatml: str | None = None
    draft_texts: list[str] = field(default_factory=list)
    scores: SegmentScores = field(default_factory=SegmentScores)
    latency: LatencyRecord | None = None
    cache_hit: bool = False
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "reference": self.reference,
            "output": self.output,
            "prompt_chatml": self.prompt_chatml,
            "draft_texts": list(self.draft_texts),
            "scores": self.scores.to_dict(),
            "latency": self.latency.to_dict() if self.latency else None,
            "cache_hit": self.cache_hit,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SegmentRow":
        return cls(
            id=data["id"],
            source=data.get("source", ""),
            reference=data.get("reference"),
            output=data.get("output"),
            prompt_chatml=data.get("prompt_chatml"),
            draft_texts=list(data.get("draft_texts", [])),
            scores=SegmentScores.from_dict(data.get("scores", {})),
            latency=LatencyRecord.from_dict(data["latency"]) if data.get("latency") else None,
            cache_hit=bool(data.get("cache_hit", False)),
            error=data.get("error"),
        )


@dataclass
class EvaluationReport:
    run_config: dict[str, Any]
    rows: list[SegmentRow]
    aggregates: dict[str, Any]
    started_at: str
    finished_at: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_config": self.run_config,
            "rows": [r.to_dict() for r in self.rows],
            "aggregates": self.aggregates,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvaluationReport":
        return cls(
            run_config=data["run_config"],
            rows=[SegmentRow.from_dict(r) for r in data["rows"]],
            aggregates=data["aggregates"],
            started_at=data["started_at"],
            finished_at=data["finished_at"],
        )

    def write_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)

    def write_csv(self, path: str) -> None:
        """Flat per-segment summary, one row per segment."""
        external_names = sorted({name for r in self.rows for name in r.scores.external})
        columns = [
            "id", "error", "cache_hit", "output", "reference",
            "chrfpp", "bleu", "ppl", "nm", "usw",
            "stm_ms", "llm_ms", "overhead_ms", "total_ms", "prompt_tokens",
        ] + external_names
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in self.rows:
                latency = row.latency
                writer.writerow(
                    [
                        row.id, row.error, row.cache_hit, row.output, row.reference,
                        row.scores.chrfpp, row.scores.bleu, row.scores.ppl,
                        row.scores.nm, row.scores.usw,
                        latency.stm_ms if latency else None,
                        latency.llm_ms if latency else None,
                        latency.overhead_ms if latency else None,
                        latency.total_ms if latency else None,
                        latency.prompt_length_tokens if latency else None,
                    ]
                    + [row.scores.external.get(name) for name in external_names]
                )


def _mean(values: list[float]) -> float | None:
    # np.mean uses pairwise summation, which keeps recomputation bitwise
    # reproducible from the same row order.
    return float(np.mean(np.asarray(values, dtype=np.float64))) if values else None


def compute_aggregates(rows: Sequence[SegmentRow]) -> dict[str, Any]:
    """Corpus aggregates as a pure function of the per-segment rows."""
    ok_rows = [r for r in rows if r.error is None]
    chrf_vals = [r.scores.chrfpp for r in ok_rows if r.scores.chrfpp is not None]
    ppl_vals = [r.scores.ppl for r in ok_rows if r.scores.ppl is not None]
    nm_vals = [r.scores.nm for r in ok_rows if r.scores.nm is not None]
    usw_vals = [r.scores.usw for r in ok_rows if r.scores.usw is not None]

    bleu_rows = [r for r in ok_rows if r.reference is not None and r.output is not None]
    if bleu_rows:
        bleu = corpus_bleu(
            [r.output.split() for r in bleu_rows],
            [r.reference.split() for r in bleu_rows],
        )
    else:
        bleu = None

    latencies = [r.latency for r in ok_rows if r.latency is not None]
    external_names = sorted({name for r in ok_rows for name in r.scores.external})
    return {
        "rows": len(rows),
        "errors": sum(1 for r in rows if r.error is not None),
        "chrf_pp": _mean(chrf_vals),
        "bleu": bleu,
        "bleu_tokenization": BLEU_TOKENIZATION,
        "nm_formula": NM_FORMULA,
        "mean_ppl": _mean(ppl_vals),
        "mean_nm": _mean(nm_vals),
        "mean_usw": _mean(usw_vals),
        "external": {
            name: _mean([r.scores.external[name] for r in ok_rows if name in r.scores.external])
            for name in external_names
        },
        "latency": aggregate_latency(latencies) if latencies else None,
    }


def score_segment(record: DatasetRecord, output: str, opts: EvalOptions) -> SegmentScores:
    """Fill in whatever metrics the available inputs allow."""
    scores = SegmentScores()
    if record.reference is not None:
        scores.chrfpp = chrf_pp(output, record.reference)
        scores.bleu = corpus_bleu([output.split()], [record.reference.split()])
    if record.alignments is not None:
        scores.nm = non_monotonicity(record.alignments)
        scores.usw = unaligned_source_words(record.alignments)
    if opts.lm is not None:
        scores.ppl = perplexity(fetch_token_logprobs(opts.lm, output))
    for name, endpoint in opts.scorers.items():
        scores.external[name] = score_external(endpoint, record.source, output, record.reference)
    return scores


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def run_evaluate(
    records: Sequence[DatasetRecord],
    engine: Engine,
    pool: DemoPool | None,
    opts: EvalOptions,
) -> EvaluationReport:
    """Translate every record and score it where inputs allow.

    Per-segment errors are recorded in their rows, not raised; the run only
    fails (RunFailed) when more than half of the segments error. Rows come
    back in dataset order regardless of worker completion order.
    """
    started = _now()

    def work(record: DatasetRecord) -> SegmentRow:
        row = SegmentRow(id=record.id, source=record.source, reference=record.reference)
        try:
            job = TranslationJob(
                id=record.id,
                source_lang=record.source_lang,
                target_lang=record.target_lang,
                source_text=record.source,
                mode=opts.mode,
                shots=opts.shots,
                num_paths=opts.num_paths,
                include_confidence=opts.include_confidence,
                pivot_lang=opts.pivot_lang,
            )
            result = engine.translate(job, pool)
            row.output = result.output_text
            row.prompt_chatml = result.prompt.chatml
            row.draft_texts = [d.text for d in result.drafts.drafts]
            row.latency = result.latency
            row.cache_hit = result.cache_hit
            row.scores = score_segment(record, result.output_text, opts)
        except ScaleError as exc:
            row.error = str(exc)
        return row

    with ThreadPoolExecutor(max_workers=max(1, opts.workers)) as pool_exec:
        rows = list(pool_exec.map(work, records))

    report = EvaluationReport(
        run_config={"options": opts.to_dict(), "engine": engine.snapshot().to_dict(redact_secrets=True)},
        rows=rows,
        aggregates=compute_aggregates(rows),
        started_at=started,
        finished_at=_now(),
    )
    errors = report.aggregates["errors"]
    if errors * 2 > len(records):
        raise RunFailed(f"{errors}/{len(records)} segments errored", report)
    return report


def analyze_report(
    report: EvaluationReport,
    lm: ScoringEndpointConfig | None = None,
    aligner: ScoringEndpointConfig | None = None,
    scorers: dict[str, ScoringEndpointConfig] | None = None,
) -> EvaluationReport:
    """Enrich an existing report with fluency/literalness measures.

    With an aligner endpoint, source-to-output alignments are fetched and
    nm/usw recomputed for the translation itself; with an LM endpoint,
    perplexity is filled in; extra scorers add their scalars. Aggregates are
    recomputed at the end.
    """
    for row in report.rows:
        if row.error is not None or row.output is None:
            continue
        if lm is not None:
            row.scores.ppl = perplexity(fetch_token_logprobs(lm, row.output))
        if aligner is not None:
            alignment = fetch_alignment(aligner, row.source, row.output)
            row.scores.nm = non_monotonicity(alignment) if alignment.pairs else None
            row.scores.usw = unaligned_source_words(alignment)
        for name, endpoint in (scorers or {}).items():
            row.scores.external[name] = score_external(endpoint, row.source, row.output, row.reference)
    report.aggregates = compute_aggregates(report.rows)
    return report


def bench_latency(
    records: Sequence[DatasetRecord],
    engine: Engine,
    pool: DemoPool | None,
    opts: EvalOptions,
    shots_list: Sequence[int],
    repeat: int = 1,
) -> dict[str, Any]:
    """Replay the dataset once per shot count (times ``repeat``) and emit a
    per-shot-count latency table: avg prompt tokens, STM, LLM, total."""
    table = []
    for shots in shots_list:
        run_opts = replace(opts, shots=shots)
        latencies: list[LatencyRecord] = []
        for _ in range(max(1, repeat)):
            report = run_evaluate(records, engine, pool, run_opts)
            latencies.extend(r.latency for r in report.rows if r.latency is not None)
        summary = aggregate_latency(latencies)
        table.append(
            {
                "shots": shots,
                "mean_prompt_tokens": summary["mean_prompt_tokens"],
                "stm_s": summary["mean_stm_ms"] / 1000.0,
                "llm_s": summary["mean_llm_ms"] / 1000.0,
                "total_s": summary["mean_total_ms"] / 1000.0,
            }
        )
    return {"repeat": repeat, "rows": table}
