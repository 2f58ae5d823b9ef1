# poaas/service.py
# ======================================================================
#  HTTP 编排服务（Flask）
#  - POST /infer：完整流水线，写运行产物，返回优化后的提示
#  - POST /clean | /paraphrase | /fact：只跑单个 specialist（调用 + 清洗 + 守卫 + 漂移），不合并
#  - GET /metrics：Prometheus 文本格式；GET /healthz：存活与配置摘要
#  - 每个响应带 X-Config-Hash；specialist 故障一律 200 + 回落，绝不 5xx
#  - serve：werkzeug 线程服务器，SIGTERM/SIGINT 时停止接收并等待在途请求完成
# ======================================================================

from __future__ import annotations
import signal, threading
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional

from flask import Flask, Response, g, jsonify, request
from pydantic import BaseModel, ConfigDict, ValidationError
from werkzeug.serving import make_server

from poaas.agents import AgentKind, Transport, build_transports
from poaas.artifacts import ArtifactStore
from poaas.config import PipelineConfig
from poaas.guards import Guard, build_guards
from poaas.logging_utils import info, kv_table, success, warn
from poaas.metrics import OrchestratorMetrics
from poaas.pipeline import optimize, run_specialist
from poaas.util import ConfigError, EmptyInput, ServiceUnavailable

SPECIALIST_ROUTES = {
    "/clean": AgentKind.CLEANER,
    "/paraphrase": AgentKind.PARAPHRASER,
    "/fact": AgentKind.FACT_ADDER,
}


# --------------------------- 请求体 ---------------------------
class InferRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    prompt: str
    config_overrides: Optional[Dict[str, Any]] = None


class SpecialistBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    text: str


class BadRequest(ValueError):
    pass


def _parse(model: type[BaseModel], payload: Any) -> BaseModel:
    if not isinstance(payload, dict):
        raise BadRequest("request body must be a JSON object")
    try:
        return model.model_validate(payload)
    except ValidationError as ex:
        first = ex.errors()[0]
        loc = ".".join(str(x) for x in first.get("loc", ())) or "body"
        raise BadRequest(f"{loc}: {first.get('msg', 'invalid')}") from None


# --------------------------- 状态 ---------------------------
@dataclass
class ServiceState:
    cfg: PipelineConfig
    transports: Mapping[AgentKind, Transport]
    guards: Mapping[str, Guard]
    metrics: OrchestratorMetrics
    store: ArtifactStore
    config_hash: str


def _state() -> ServiceState:
    from flask import current_app
    return current_app.extensions["poaas"]


def create_app(cfg: Optional[PipelineConfig] = None, *,
               transports: Optional[Mapping[AgentKind, Transport]] = None,
               guards: Optional[Mapping[str, Guard]] = None,
               metrics: Optional[OrchestratorMetrics] = None,
               store: Optional[ArtifactStore] = None) -> Flask:
    cfg = cfg or PipelineConfig()
    lex = cfg.lexicon()
    state = ServiceState(
        cfg=cfg,
        transports=transports or build_transports(cfg, lex),
        guards=guards or build_guards(cfg.guard_endpoints, lex=lex, repair=cfg.guard_repair,
                                      timeout=cfg.specialist_timeout_s),
        metrics=metrics or OrchestratorMetrics(),
        store=store or ArtifactStore(cfg.artifact_dir),
        config_hash=cfg.config_hash,
    )
    app = Flask("poaas")
    app.extensions["poaas"] = state

    @app.after_request
    def _stamp(resp: Response) -> Response:
        resp.headers["X-Config-Hash"] = getattr(g, "config_hash", state.config_hash)
        state.metrics.count_request(request.path, resp.status_code)
        return resp

    @app.errorhandler(BadRequest)
    @app.errorhandler(EmptyInput)
    @app.errorhandler(ConfigError)
    def _bad_request(ex: Exception):
        return jsonify({"error": str(ex)}), 400

    @app.post("/infer")
    def infer():
        body = _parse(InferRequest, request.get_json(silent=True))
        st = _state()
        eff = st.cfg.with_overrides(body.config_overrides)
        g.config_hash = eff.config_hash if eff is not st.cfg else st.config_hash
        result = optimize(body.prompt, eff, transports=st.transports, guards=st.guards,
                          observer=st.metrics.record)
        st.store.persist(result, "/infer")
        m = result.merge
        return jsonify({
            "output": result.output,
            "skipped": result.skipped,
            "fell_back": m.fell_back,
            "applied_agents": [a.value for a in m.applied_agents],
            "selected_agents": [a.value for a in result.selected_agents],
            "rejected": [{"agent": a.value, "reason": r} for a, r in m.rejected],
            "timings_ms": {k: round(v, 3) for k, v in result.stage_timings.items()},
            "added_prompt_tokens": m.added_prompt_tokens,
            "profile": result.profile.to_dict(),
            "run_id": result.run_id,
            "config_hash": g.config_hash,
        })

    def specialist_route(kind: AgentKind):
        def handler():
            body = _parse(SpecialistBody, request.get_json(silent=True))
            st = _state()
            cand, _ = run_specialist(kind, body.text, st.cfg, transports=st.transports, guards=st.guards)
            st.metrics.record_specialist(kind.value, cand.accepted, cand.reason)
            if kind is AgentKind.FACT_ADDER:
                output = "\n".join(f"- {b}" for b in cand.bullets) if cand.bullets else "NONE"
            else:
                output = cand.sanitized_text or body.text
            return jsonify({
                "agent": kind.value,
                "output": output,
                "accepted": cand.accepted,
                "reason": cand.reason,
                "guard": cand.guard.to_dict() if cand.guard else None,
                "drift": cand.drift.to_dict() if cand.drift else None,
                "config_hash": st.config_hash,
            })
        handler.__name__ = f"specialist_{kind.value}"
        return handler

    for route, kind in SPECIALIST_ROUTES.items():
        app.add_url_rule(route, view_func=specialist_route(kind), methods=["POST"])

    @app.get("/metrics")
    def metrics_route():
        return Response(_state().metrics.render(), mimetype=OrchestratorMetrics.content_type)

    @app.get("/healthz")
    def healthz():
        st = _state()
        return jsonify({"status": "ok", "mock_mode": st.cfg.mock_mode, "config_hash": st.config_hash})

    return app


# --------------------------- 运行 ---------------------------
def serve(cfg: PipelineConfig, host: str, port: int, app: Optional[Flask] = None) -> None:
    """阻塞运行；端口占用等绑定失败 -> ServiceUnavailable（CLI 退出码 1）"""
    app = app or create_app(cfg)
    try:
        server = make_server(host, port, app, threaded=True)
    except (OSError, SystemExit) as ex:
        raise ServiceUnavailable(f"cannot bind {host}:{port}: {ex}") from None
    # 非守护线程 + block_on_close：server_close 时等待在途请求
    server.daemon_threads = False
    server.block_on_close = True

    kv_table("POaaS service", {
        "bind": f"http://{host}:{server.server_port}",
        "mock_mode": cfg.mock_mode,
        "config_hash": cfg.config_hash,
        "artifacts": cfg.artifact_dir,
    })
    info(f"[service] config_hash={cfg.config_hash}")

    def _stop(signum, _frame):
        warn(f"[service] signal {signum}: draining in-flight requests")
        threading.Thread(target=server.shutdown, daemon=True).start()

    for sig in (signal.SIGTERM, signal.SIGINT):
        try:
            signal.signal(sig, _stop)
        except ValueError:  # 非主线程（测试）
            pass
    try:
        server.serve_forever()
    finally:
        server.server_close()
        success("[service] stopped")
