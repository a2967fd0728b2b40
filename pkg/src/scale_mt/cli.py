"""Command-line entry point.

Subcommands: translate, evaluate, analyze, build-demos, serve-mock,
bench-latency, serve-engine. Endpoint URLs from the config file can be
overridden with SCALE_STM_URL, SCALE_STM_PIVOT_URL and SCALE_LLM_URL;
SCALE_SCORER_URL / SCALE_ALIGNER_URL provide default metric endpoints, and
SCALE_API_KEY is forwarded as a bearer token on every client.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Any

from .core import ScaleError, job_from_dict, load_language_registry
from .demo_store import DraftCacheKey, load_pool
from .engine import Engine, EngineConfig
from .harness import (
    EvalOptions,
    EvaluationReport,
    RunFailed,
    analyze_report,
    bench_latency,
    load_dataset,
    run_evaluate,
)
from .metrics import ScoringEndpointConfig
from .mockserv import serve_mock
from .service import EngineServer
from .stm_client import request_drafts


def _load_engine_config(path: str | None) -> EngineConfig:
    if path is None:
        raise ScaleError("this command needs --config (JSON mirroring the engine config)")
    with open(path, encoding="utf-8") as fh:
        config = EngineConfig.from_dict(json.load(fh))

    def override(cfg, url_env):
        url = os.environ.get(url_env)
        changes = {}
        if url:
            changes["base_url"] = url
        if os.environ.get("SCALE_API_KEY"):
            changes["api_key"] = os.environ["SCALE_API_KEY"]
        return dataclasses.replace(cfg, **changes) if changes else cfg

    return dataclasses.replace(
        config,
        stm=override(config.stm, "SCALE_STM_URL"),
        stm_pivot=override(config.stm_pivot, "SCALE_STM_PIVOT_URL") if config.stm_pivot else None,
        llm=override(config.llm, "SCALE_LLM_URL"),
    )


def _scoring_endpoint(url: str | None) -> ScoringEndpointConfig | None:
    if not url:
        return None
    return ScoringEndpointConfig(base_url=url, api_key=os.environ.get("SCALE_API_KEY"))


def _eval_options(args, config: EngineConfig, registry) -> EvalOptions:
    defaults = config.defaults
    scorers = {}
    default_scorer = os.environ.get("SCALE_SCORER_URL")
    if default_scorer:
        scorers["scorer"] = _scoring_endpoint(default_scorer)
    for spec in getattr(args, "scorer", None) or []:
        name, _, url = spec.partition("=")
        if not url:
            raise ScaleError(f"--scorer wants NAME=URL, got {spec!r}")
        scorers[name] = _scoring_endpoint(url)
    pivot = None
    if getattr(args, "pivot_lang", None):
        from .core import parse_language_tag

        pivot = parse_language_tag(args.pivot_lang, registry)
    return EvalOptions(
        mode=args.mode,
        shots=args.shots if args.shots is not None else defaults.shots,
        num_paths=args.paths if args.paths is not None else defaults.num_paths,
        include_confidence=(
            False if args.no_confidence else defaults.include_confidence
        ),
        pivot_lang=pivot,
        lm=_scoring_endpoint(getattr(args, "lm_url", None)),
        scorers=scorers,
        workers=args.workers,
    )


def cmd_translate(args) -> int:
    registry = load_language_registry(args.registry)
    config = _load_engine_config(args.config)
    with open(args.job, encoding="utf-8") as fh:
        job = job_from_dict(json.load(fh), registry)
    pool = load_pool(args.pool) if args.pool else None
    engine = Engine(config)
    result = engine.translate(job, pool)
    payload = json.dumps(result.to_dict(), ensure_ascii=False, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def cmd_evaluate(args) -> int:
    registry = load_language_registry(args.registry)
    config = _load_engine_config(args.config)
    records = load_dataset(args.dataset, registry)
    pool = load_pool(args.pool) if args.pool else None
    opts = _eval_options(args, config, registry)
    engine = Engine(config)
    try:
        report = run_evaluate(records, engine, pool, opts)
        failed = False
    except RunFailed as exc:
        report = exc.report
        failed = True
        print(f"error: {exc}", file=sys.stderr)
    report.write_json(args.out)
    if args.csv:
        report.write_csv(args.csv)
    _print_summary(report)
    return 2 if failed else 0


def cmd_analyze(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        report = EvaluationReport.from_dict(json.load(fh))
    scorers = {}
    for spec in args.scorer or []:
        name, _, url = spec.partition("=")
        if not url:
            raise ScaleError(f"--scorer wants NAME=URL, got {spec!r}")
        scorers[name] = _scoring_endpoint(url)
    report = analyze_report(
        report,
        lm=_scoring_endpoint(args.lm_url),
        aligner=_scoring_endpoint(args.aligner_url or os.environ.get("SCALE_ALIGNER_URL")),
        scorers=scorers,
    )
    out = args.out or args.report
    report.write_json(out)
    _print_summary(report)
    return 0


def cmd_build_demos(args) -> int:
    """Pre-generate STM drafts for every pool entry and persist them into
    the pool file's ``drafts`` field."""
    registry = load_language_registry(args.registry)
    config = _load_engine_config(args.config)
    from .core import parse_language_tag

    target = parse_language_tag(args.target_lang, registry)
    source = parse_language_tag(args.source_lang, registry)
    pool = load_pool(args.pool)
    key = DraftCacheKey(
        stm_model_id=config.stm.model_id,
        target_lang=target.code,
        num_paths=args.paths,
        sampling=config.stm.sampling,
    )
    lines = []
    for index, entry in enumerate(pool.entries):
        drafts = pool.get_drafts(
            index,
            key,
            fetch=lambda e: request_drafts(
                config.stm, source, target, e.source, args.paths, want_token_probs=True
            ),
        )
        lines.append(
            {
                "source": entry.source,
                "target": entry.target,
                "drafts": [d.to_dict() for d in drafts.drafts],
            }
        )
    out = args.out or args.pool
    tmp = out + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, ensure_ascii=False) + "\n")
    os.replace(tmp, out)
    print(f"wrote {len(lines)} entries with drafts to {out}")
    return 0


def cmd_serve_mock(args) -> int:
    server = serve_mock(args.kind, args.script, args.port, host=args.host)
    print(f"mock {args.kind} listening on {server.base_url} (Ctrl-C to stop)")
    try:
        server._thread.join()
    except KeyboardInterrupt:
        server.stop()
    return 0


def cmd_bench_latency(args) -> int:
    registry = load_language_registry(args.registry)
    config = _load_engine_config(args.config)
    # Benchmarks bypass the result cache; cached latencies would be noise.
    config = dataclasses.replace(config, cache_dir=None)
    records = load_dataset(args.dataset, registry)
    pool = load_pool(args.pool) if args.pool else None
    opts = _eval_options(args, config, registry)
    shots_list = [int(s) for s in args.shots_list.split(",")]
    engine = Engine(config)
    table = bench_latency(records, engine, pool, opts, shots_list, repeat=args.repeat)
    payload = json.dumps(table, ensure_ascii=False, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
    print(f"{'shots':>6} {'prompt_tokens':>14} {'stm_s':>8} {'llm_s':>8} {'total_s':>8}")
    for row in table["rows"]:
        print(
            f"{row['shots']:>6} {row['mean_prompt_tokens']:>14.2f} "
            f"{row['stm_s']:>8.2f} {row['llm_s']:>8.2f} {row['total_s']:>8.2f}"
        )
    return 0


def cmd_serve_engine(args) -> int:
    registry = load_language_registry(args.registry)
    config = _load_engine_config(args.config)
    pool = load_pool(args.pool) if args.pool else None
    server = EngineServer(
        Engine(config), pool=pool, registry=registry, host=args.host, port=args.port
    )
    print(f"engine listening on {server.base_url} (Ctrl-C to stop)")
    try:
        server.start()._thread.join()
    except KeyboardInterrupt:
        server.stop()
    return 0


def _print_summary(report: EvaluationReport) -> None:
    agg = report.aggregates
    parts = [f"rows={agg['rows']}", f"errors={agg['errors']}"]
    for name in ("chrf_pp", "bleu", "mean_ppl", "mean_nm", "mean_usw"):
        if agg.get(name) is not None:
            parts.append(f"{name}={agg[name]:.4f}")
    if agg.get("latency"):
        parts.append(f"mean_total_ms={agg['latency']['mean_total_ms']:.1f}")
    print("  ".join(parts))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scale", description="Draft-guided machine translation gateway."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--registry", help="language registry TSV (default: bundled)")
        if config:
            p.add_argument("--config", help="engine config JSON")

    def eval_flags(p):
        p.add_argument("--mode", choices=("direct", "refine", "pivot"), default="refine")
        p.add_argument("--shots", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--no-confidence", action="store_true")
        p.add_argument("--pivot-lang", help="pivot language code (pivot mode)")
        p.add_argument("--pool", help="demonstration pool JSONL")
        p.add_argument("--lm-url", help="language model endpoint for perplexity")
        p.add_argument("--scorer", action="append", help="NAME=URL external scorer (repeatable)")
        p.add_argument("--workers", type=int, default=4)

    p = sub.add_parser("translate", help="translate one job file")
    common(p)
    p.add_argument("--job", required=True, help="job JSON file")
    p.add_argument("--pool", help="demonstration pool JSONL")
    p.add_argument("--out", help="write result JSON here instead of stdout")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="run a dataset through the engine")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", help="also write a flat CSV summary")
    eval_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="enrich a report with ppl/nm/usw")
    p.add_argument("--report", required=True)
    p.add_argument("--out", help="output path (default: in place)")
    p.add_argument("--lm-url")
    p.add_argument("--aligner-url")
    p.add_argument("--scorer", action="append")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("build-demos", help="pre-generate STM drafts for a pool")
    common(p)
    p.add_argument("--pool", required=True)
    p.add_argument("--source-lang", required=True)
    p.add_argument("--target-lang", required=True)
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--out", help="output pool path (default: in place)")
    p.set_defaults(func=cmd_build_demos)

    p = sub.add_parser("serve-mock", help="serve a scripted mock endpoint")
    p.add_argument("--kind", choices=("stm", "llm", "scorer", "aligner"), required=True)
    p.add_argument("--script", required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve_mock)

    p = sub.add_parser("bench-latency", help="per-shot-count latency table")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--shots-list", default="0,1,10", help="comma-separated shot counts")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--out", help="write the table JSON here")
    eval_flags(p)
    p.set_defaults(func=cmd_bench_latency)

    p = sub.add_parser("serve-engine", help="host the engine as an HTTP service")
    common(p)
    p.add_argument("--pool", help="demonstration pool JSONL")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve_engine)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
