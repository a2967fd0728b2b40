from __future__ import annotations

import dataclasses
import json

import pytest
import requests

from helpers import EvalRig, make_draft
from scale_mt.engine import Engine
from scale_mt.harness import (
    DatasetParseError,
    DatasetRecord,
    EvalOptions,
    EvaluationReport,
    RunFailed,
    analyze_report,
    bench_latency,
    compute_aggregates,
    load_dataset,
    run_evaluate,
)
from scale_mt.http_util import fingerprint
from scale_mt.metrics import ScoringEndpointConfig
from scale_mt.mockserv import MockServer, PortInUse, make_script


def _write_dataset(tmp_path, rows, name="dataset.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join(json.dumps(r, ensure_ascii=False) for r in rows) + "\n", "utf-8")
    return str(path)


def _row(rid, source, reference=None, **extra):
    row = {
        "id": rid,
        "source_lang": "xho_Latn",
        "target_lang": "eng_Latn",
        "source": source,
    }
    if reference is not None:
        row["reference"] = reference
    row.update(extra)
    return row


# ---------------------------------------------------------------------------
# dataset loading
# ---------------------------------------------------------------------------


def test_load_dataset_counts(tmp_path, registry):
    path = _write_dataset(tmp_path, [_row("a", "x"), _row("b", "y")])
    records = load_dataset(path, registry)
    assert [r.id for r in records] == ["a", "b"]


def test_load_dataset_duplicate_id(tmp_path, registry):
    path = _write_dataset(tmp_path, [_row("a", "x"), _row("a", "y")])
    with pytest.raises(DatasetParseError) as err:
        load_dataset(path, registry)
    assert err.value.line == 2


def test_load_dataset_bad_alignment(tmp_path, registry):
    bad = _row("a", "x", reference="y", alignments={"pairs": [[1, 9]], "m": 2, "n": 3})
    path = _write_dataset(tmp_path, [bad])
    with pytest.raises(DatasetParseError) as err:
        load_dataset(path, registry)
    assert err.value.line == 1


# ---------------------------------------------------------------------------
# scripted mock server contract
# ---------------------------------------------------------------------------


def test_mock_unscripted_echoes_fingerprint():
    server = MockServer("stm", {}).start()
    try:
        body = {"some": "request"}
        resp = requests.post(server.base_url + "/translate", json=body, timeout=5)
        assert resp.status_code == 404
        assert resp.json()["fingerprint"] == fingerprint(body)
    finally:
        server.stop()


def test_mock_log_order():
    server = MockServer("stm", {}).start()
    try:
        requests.post(server.base_url + "/translate", json={"n": 1}, timeout=5)
        requests.post(server.base_url + "/translate", json={"n": 2}, timeout=5)
        log = requests.get(server.base_url + "/_log", timeout=5).json()["entries"]
        assert [e["body"]["n"] for e in log] == [1, 2]
    finally:
        server.stop()


def test_mock_port_in_use():
    server = MockServer("stm", {}).start()
    try:
        with pytest.raises(PortInUse):
            MockServer("stm", {}, port=server.port)
    finally:
        server.stop()


def test_mock_scripted_roundtrip(tmp_path):
    from scale_mt.mockserv import dump_script, serve_mock

    body = {"ping": True}
    script_path = str(tmp_path / "script.json")
    dump_script([{"request": body, "response": {"pong": True}}], script_path)
    server = serve_mock("scorer", script_path, port=0)
    try:
        resp = requests.post(server.base_url + "/score", json=body, timeout=5)
        assert resp.json() == {"pong": True}
    finally:
        server.stop()


# ---------------------------------------------------------------------------
# run_evaluate mechanics
# ---------------------------------------------------------------------------


def _records(tags, sources):
    return [
        DatasetRecord(
            id=rid,
            source_lang=tags["xho_Latn"],
            target_lang=tags["eng_Latn"],
            source=text,
            reference=ref,
        )
        for rid, text, ref in sources
    ]


def test_run_evaluate_three_records(tags, xho_pool):
    sources = [
        ("r1", "Indlovu iyasela emlanjeni.", "The elephant drinks at the river."),
        ("r2", "Inja encinci ilele.", "The small dog sleeps."),
        ("r3", "Imvula iyana.", None),  # no reference
    ]
    with EvalRig(tags["xho_Latn"], tags["eng_Latn"], [(r, t) for r, t, _ in sources], xho_pool) as rig:
        opts = EvalOptions(mode="refine", shots=2, num_paths=1, workers=2)
        report = run_evaluate(_records(tags, sources), Engine(rig.config), xho_pool, opts)
    assert [r.id for r in report.rows] == ["r1", "r2", "r3"]
    assert report.aggregates["rows"] == 3
    assert report.aggregates["errors"] == 0
    for row in report.rows:
        assert row.output == f"Output {row.id}."
        assert "Potentially useful reference answer 1:" in row.prompt_chatml
    # Reference-less row carries no lexical scores.
    r3 = report.rows[2]
    assert r3.scores.chrfpp is None and r3.scores.bleu is None
    assert report.rows[0].scores.chrfpp is not None
    assert report.aggregates["chrf_pp"] is not None
    assert report.aggregates["nm_formula"] == "mean |i/m - j/n|"


def test_report_self_consistency_bitwise(tags, xho_pool):
    sources = [
        ("r1", "Indlovu iyasela emlanjeni.", "The elephant drinks at the river."),
        ("r2", "Inja encinci ilele.", "The small dog sleeps."),
    ]
    with EvalRig(
        tags["xho_Latn"], tags["eng_Latn"], [(r, t) for r, t, _ in sources], xho_pool, shots=1
    ) as rig:
        opts = EvalOptions(mode="refine", shots=1, workers=1)
        report = run_evaluate(_records(tags, sources), Engine(rig.config), xho_pool, opts)
    # Round-trip through JSON, then recompute aggregates from rows alone.
    clone = EvaluationReport.from_dict(json.loads(json.dumps(report.to_dict())))
    assert compute_aggregates(clone.rows) == report.aggregates


def test_rerun_with_cache_identical_except_volatile_fields(tags, xho_pool, tmp_path):
    sources = [("r1", "Indlovu iyasela emlanjeni.", "The elephant drinks at the river.")]
    with EvalRig(
        tags["xho_Latn"], tags["eng_Latn"], [(r, t) for r, t, _ in sources], xho_pool,
        cache_dir=str(tmp_path / "cache"),
    ) as rig:
        opts = EvalOptions(mode="refine", shots=2, workers=1)
        engine = Engine(rig.config)
        records = _records(tags, sources)
        first = run_evaluate(records, engine, xho_pool, opts)
        calls_after_first = (rig.stm.request_count(), rig.llm.request_count())
        second = run_evaluate(records, engine, xho_pool, opts)
        assert (rig.stm.request_count(), rig.llm.request_count()) == calls_after_first

    def strip(report):
        data = report.to_dict()
        data.pop("started_at"), data.pop("finished_at")
        for row in data["rows"]:
            row.pop("latency")
            # cache_hit necessarily flips on the rerun.
            row.pop("cache_hit")
        data["aggregates"].pop("latency")
        return data

    assert strip(first) == strip(second)


def test_run_fails_over_half_errors(tags, xho_pool):
    # Only r1 is scripted; r2 and r3 hit unscripted 404s and error out.
    sources = [("r1", "Indlovu iyasela emlanjeni.", None)]
    with EvalRig(tags["xho_Latn"], tags["eng_Latn"], [(r, t) for r, t, _ in sources], xho_pool) as rig:
        opts = EvalOptions(mode="refine", shots=2, workers=1)
        records = _records(
            tags,
            [
                ("r1", "Indlovu iyasela emlanjeni.", None),
                ("r2", "Unscripted one.", None),
                ("r3", "Unscripted two.", None),
            ],
        )
        with pytest.raises(RunFailed) as err:
            run_evaluate(records, Engine(rig.config), xho_pool, opts)
        report = err.value.report
        assert report.aggregates["errors"] == 2
        assert report.rows[0].error is None
        assert report.rows[1].error is not None


def test_errors_below_half_are_recorded_not_fatal(tags, xho_pool):
    sources = [
        ("r1", "Indlovu iyasela emlanjeni.", None),
        ("r2", "Inja encinci ilele.", None),
    ]
    with EvalRig(tags["xho_Latn"], tags["eng_Latn"], [(r, t) for r, t, _ in sources], xho_pool) as rig:
        opts = EvalOptions(mode="refine", shots=2, workers=1)
        records = _records(
            tags,
            [
                ("r1", "Indlovu iyasela emlanjeni.", None),
                ("r2", "Inja encinci ilele.", None),
                ("r3", "Unscripted.", None),
            ],
        )
        report = run_evaluate(records, Engine(rig.config), xho_pool, opts)
        assert report.aggregates["errors"] == 1
        assert report.rows[2].error is not None


def test_csv_summary(tags, xho_pool, tmp_path):
    sources = [("r1", "Indlovu iyasela emlanjeni.", "The elephant drinks at the river.")]
    with EvalRig(
        tags["xho_Latn"], tags["eng_Latn"], [(r, t) for r, t, _ in sources], xho_pool, shots=1
    ) as rig:
        opts = EvalOptions(mode="refine", shots=1, workers=1)
        report = run_evaluate(_records(tags, sources), Engine(rig.config), xho_pool, opts)
    csv_path = tmp_path / "report.csv"
    report.write_csv(str(csv_path))
    lines = csv_path.read_text("utf-8").strip().splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("id,error,cache_hit,output,reference,chrfpp,bleu")


def test_refine_vs_direct_differ_only_in_prompt_fields(tags, xho_pool):
    source = "Indlovu iyasela emlanjeni."
    reference = "The elephant drinks at the river."
    records = _records(tags, [("r1", source, reference)])

    with EvalRig(tags["xho_Latn"], tags["eng_Latn"], [("r1", source)], xho_pool,
                 completion_for=lambda rid: "Same output.") as rig:
        refine_report = run_evaluate(
            records, Engine(rig.config), xho_pool, EvalOptions(mode="refine", shots=2, workers=1)
        )

    # Direct rig: script the fewshot prompt by hand.
    from helpers import llm_entry
    from scale_mt.core import TranslationJob
    from scale_mt.demo_store import select_demonstrations
    from scale_mt.llm_client import LlmEndpointConfig
    from scale_mt.prompt_builder import build_fewshot_prompt

    job = TranslationJob(
        id="r1", source_lang=tags["xho_Latn"], target_lang=tags["eng_Latn"],
        source_text=source, mode="direct", shots=2,
    )
    demos = [(e.source, e.target) for e in select_demonstrations(xho_pool, source, 2)]
    bundle = build_fewshot_prompt(job, demos)
    llm_proto = LlmEndpointConfig(base_url="http://llm.proto", model_id="llm-a",
                                  timeout_ms=5000, max_retries=0)
    body, resp = llm_entry(llm_proto, bundle, "Same output.")
    llm_server = MockServer("llm", make_script([(body, resp)])).start()
    try:
        from scale_mt.engine import EngineConfig
        from scale_mt.stm_client import StmEndpointConfig

        config = EngineConfig(
            stm=StmEndpointConfig(base_url="http://unused.test", model_id="stm-a"),
            llm=dataclasses.replace(llm_proto, base_url=llm_server.base_url),
        )
        direct_report = run_evaluate(
            records, Engine(config), xho_pool, EvalOptions(mode="direct", shots=2, workers=1)
        )
    finally:
        llm_server.stop()

    refine_row, direct_row = refine_report.rows[0], direct_report.rows[0]
    assert refine_row.output == direct_row.output
    assert refine_row.scores.to_dict() == direct_row.scores.to_dict()
    assert refine_row.prompt_chatml != direct_row.prompt_chatml
    assert refine_row.draft_texts and not direct_row.draft_texts


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def test_analyze_adds_ppl_and_alignment_measures(tags, xho_pool):
    source = "Indlovu iyasela emlanjeni."
    with EvalRig(tags["xho_Latn"], tags["eng_Latn"], [("r1", source)], xho_pool, shots=1) as rig:
        report = run_evaluate(
            _records(tags, [("r1", source, None)]),
            Engine(rig.config),
            xho_pool,
            EvalOptions(mode="refine", shots=1, workers=1),
        )
    output = report.rows[0].output
    lm = MockServer(
        "scorer", make_script([({"text": output}, {"token_logprobs": [-0.5, -1.5]})])
    ).start()
    aligner = MockServer(
        "aligner",
        make_script([({"src": source, "tgt": output}, {"pairs": [[1, 1], [2, 2]], "m": 4, "n": 3})]),
    ).start()
    try:
        enriched = analyze_report(
            report,
            lm=ScoringEndpointConfig(base_url=lm.base_url, max_retries=0),
            aligner=ScoringEndpointConfig(base_url=aligner.base_url, max_retries=0),
        )
        row = enriched.rows[0]
        import math

        assert row.scores.ppl == pytest.approx(math.exp(1.0), abs=1e-9)
        assert row.scores.usw == pytest.approx(0.5, abs=1e-12)
        assert enriched.aggregates["mean_ppl"] == pytest.approx(math.exp(1.0), abs=1e-9)
    finally:
        lm.stop()
        aligner.stop()


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def test_bench_latency_shape(tags, xho_pool):
    source = "Indlovu iyasela emlanjeni."
    entries = [("r1", source)]
    rig0 = EvalRig(tags["xho_Latn"], tags["eng_Latn"], entries, xho_pool, shots=0)
    rig2 = EvalRig(tags["xho_Latn"], tags["eng_Latn"], entries, xho_pool, shots=2)
    # One rig per shot count would need distinct ports; simpler: run twice.
    try:
        records = _records(tags, [("r1", source, None)])
        table0 = bench_latency(
            records, Engine(rig0.config), xho_pool, EvalOptions(mode="refine", workers=1), [0], repeat=2
        )
        table2 = bench_latency(
            records, Engine(rig2.config), xho_pool, EvalOptions(mode="refine", workers=1), [2], repeat=1
        )
    finally:
        rig0.close()
        rig2.close()
    assert [r["shots"] for r in table0["rows"]] == [0]
    row = table0["rows"][0]
    assert set(row) == {"shots", "mean_prompt_tokens", "stm_s", "llm_s", "total_s"}
    assert row["total_s"] >= row["stm_s"] + row["llm_s"] - 1e-9
    assert table2["rows"][0]["shots"] == 2
