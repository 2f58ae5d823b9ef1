# poaas/metrics.py
# ======================================================================
#  编排器指标（prometheus_client，独立 registry）
#  - 请求数 / 跳过数 / 回落数 / specialist 调用与应用次数 / 守卫拒绝（按原因）
#  - 分阶段耗时直方图、新增 token 直方图
#  - 每个服务实例一个 registry：测试中可多次创建互不干扰
#  - prometheus_client 的计数器自带锁，并发请求下计数精确
# ======================================================================

from __future__ import annotations
from prometheus_client import CONTENT_TYPE_LATEST, CollectorRegistry, Counter, Histogram, generate_latest

from poaas.pipeline import OptimizationResult, STAGES

STAGE_BUCKETS = (0.0005, 0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0)
TOKEN_BUCKETS = (0, 1, 2, 5, 10, 20, 40, 60, 80, 100, 120, 160, 240)
_SKIP_REASONS = {"OK", "NO_CHANGE", "NONE"}


class OrchestratorMetrics:
    content_type = CONTENT_TYPE_LATEST

    def __init__(self, registry: CollectorRegistry | None = None):
        self.registry = registry or CollectorRegistry()
        r = self.registry
        self.requests = Counter("poaas_requests_total", "HTTP requests handled, by route and status",
                                ["route", "status"], registry=r)
        self.optimizations = Counter("poaas_optimizations_total", "Prompts run through the pipeline",
                                     registry=r)
        self.skipped = Counter("poaas_skipped_total", "Prompts returned unchanged by the skip gate",
                               registry=r)
        self.fallbacks = Counter("poaas_fallbacks_total", "Prompts that fell back to the original text",
                                 registry=r)
        self.invocations = Counter("poaas_agent_invocations_total", "Specialist calls, by agent",
                                   ["agent"], registry=r)
        self.applied = Counter("poaas_agent_applied_total", "Specialist edits applied to the output, by agent",
                               ["agent"], registry=r)
        self.rejections = Counter("poaas_candidate_rejections_total",
                                  "Candidates rejected by guards or drift checks, by agent and reason",
                                  ["agent", "reason"], registry=r)
        self.stage_latency = Histogram("poaas_stage_latency_seconds", "Pipeline stage latency",
                                       ["stage"], buckets=STAGE_BUCKETS, registry=r)
        self.added_tokens = Histogram("poaas_added_prompt_tokens", "Prompt tokens added by refinement",
                                      buckets=TOKEN_BUCKETS, registry=r)

    def record(self, result: OptimizationResult) -> None:
        self.optimizations.inc()
        if result.skipped:
            self.skipped.inc()
        if result.merge.fell_back:
            self.fallbacks.inc()
        for c in result.candidates:
            self.invocations.labels(c.agent.value).inc()
            if not c.accepted and c.reason not in _SKIP_REASONS:
                self.rejections.labels(c.agent.value, c.reason).inc()
        for a in result.merge.applied_agents:
            self.applied.labels(a.value).inc()
        for stage in STAGES:
            self.stage_latency.labels(stage).observe(result.stage_timings.get(stage, 0.0) / 1000.0)
        self.added_tokens.observe(result.merge.added_prompt_tokens)

    def record_specialist(self, agent: str, accepted: bool, reason: str) -> None:
        """单 specialist 路由（/clean 等）只计调用与拒绝"""
        self.invocations.labels(agent).inc()
        if not accepted and reason not in _SKIP_REASONS:
            self.rejections.labels(agent, reason).inc()

    def count_request(self, route: str, status: int) -> None:
        self.requests.labels(route, str(status)).inc()

    def render(self) -> bytes:
        return generate_latest(self.registry)

    def sample(self, name: str, labels: dict | None = None) -> float:
        v = self.registry.get_sample_value(name, labels or {})
        return 0.0 if v is None else v
