import json
from datetime import datetime, timezone

from poaas.artifacts import ArtifactStore, build_artifact
from poaas.metrics import OrchestratorMetrics
from poaas.pipeline import optimize
from tests.conftest import LONG_NOISY, WELL_FORMED, boom, transports_with


def test_metrics_record(cfg, mock_transports):
    m = OrchestratorMetrics()
    m.record(optimize(WELL_FORMED, cfg, transports=mock_transports))
    m.record(optimize(LONG_NOISY, cfg, transports=mock_transports))
    m.record(optimize(LONG_NOISY, cfg, transports=transports_with(mock_transports, cleaner=boom)))
    assert m.sample("poaas_optimizations_total") == 3
    assert m.sample("poaas_skipped_total") == 1
    assert m.sample("poaas_fallbacks_total") == 1
    assert m.sample("poaas_agent_invocations_total", {"agent": "cleaner"}) == 2
    assert m.sample("poaas_agent_applied_total", {"agent": "cleaner"}) == 1
    assert m.sample("poaas_candidate_rejections_total", {"agent": "cleaner", "reason": "AGENT_ERROR"}) == 1
    assert m.sample("poaas_stage_latency_seconds_count", {"stage": "merge"}) == 3
    assert m.sample("poaas_added_prompt_tokens_count") == 3


def test_metrics_specialist_and_requests():
    m = OrchestratorMetrics()
    m.record_specialist("fact_adder", False, "NONE")
    m.record_specialist("cleaner", False, "NEW_CONTENT")
    m.count_request("/infer", 200)
    m.count_request("/infer", 400)
    assert m.sample("poaas_agent_invocations_total", {"agent": "fact_adder"}) == 1
    assert m.sample("poaas_candidate_rejections_total", {"agent": "fact_adder", "reason": "NONE"}) == 0
    assert m.sample("poaas_candidate_rejections_total", {"agent": "cleaner", "reason": "NEW_CONTENT"}) == 1
    assert m.sample("poaas_requests_total", {"route": "/infer", "status": "400"}) == 1
    text = m.render().decode()
    assert "poaas_requests_total" in text and "poaas_stage_latency_seconds_bucket" in text


def test_metrics_registries_are_independent():
    a, b = OrchestratorMetrics(), OrchestratorMetrics()
    a.count_request("/healthz", 200)
    assert b.sample("poaas_requests_total", {"route": "/healthz", "status": "200"}) == 0


def test_build_artifact(cfg, mock_transports):
    r = optimize(LONG_NOISY, cfg, transports=mock_transports)
    when = datetime(2026, 3, 1, 12, 0, tzinfo=timezone.utc)
    rec = build_artifact(r, "/infer", when)
    assert rec["run_id"] == r.run_id
    assert rec["timestamp"].startswith("2026-03-01T12:00:00.000")
    assert rec["output"] == r.output and rec["config_hash"] == cfg.config_hash
    assert rec["candidates"][0]["agent"] == "cleaner"
    assert rec["merge"]["applied_agents"] == ["cleaner"]
    json.dumps(rec)


def test_artifact_store_appends_per_day(tmp_path, cfg, mock_transports):
    store = ArtifactStore(tmp_path / "runs")
    assert list(store.iter_records()) == []
    day1 = datetime(2026, 3, 1, tzinfo=timezone.utc)
    day2 = datetime(2026, 3, 2, tzinfo=timezone.utc)
    store.append({"run_id": "a"}, day1)
    store.append({"run_id": "b"}, day1)
    path = store.append({"run_id": "c"}, day2)
    assert path.name == "runs-2026-03-02.jsonl"
    assert [r["run_id"] for r in store.iter_records()] == ["a", "b", "c"]

    r = optimize(WELL_FORMED, cfg, transports=mock_transports)
    store.persist(r)
    assert [x["run_id"] for x in store.iter_records()][-1] == r.run_id
