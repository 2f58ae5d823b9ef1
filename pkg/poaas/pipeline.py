# poaas/pipeline.py
# ======================================================================
#  最小编辑优化流水线
#  - analyze -> (跳过 | 路由) -> 并行调用 specialist -> 清洗 / 守卫 / 漂移 -> 合并
#  - few-shot：specialist 只看到最后一个问题
#  - 任何 specialist 故障都只丢弃该候选；optimize 永不因下游失败报错
#  - 分阶段计时：analyze / route / invoke / guard / merge（毫秒）
#  - 结果与完成顺序无关：候选按合并优先级排序处理
# ======================================================================

from __future__ import annotations
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Set, Tuple

from poaas.agents import (
    AgentKind, SpecialistRequest, SpecialistResponse, Transport, build_transports, invoke,
)
from poaas.config import PipelineConfig, RoutingThresholds
from poaas.drift import within_drift
from poaas.guards import (
    FewShotSegmentation, Guard, GuardReason, GuardVerdict, build_guards, detect_fewshot,
    parse_bullets, sanitize, screen_facts,
)
from poaas.heuristics import QualityProfile, analyze, should_skip, tokenize
from poaas.lexicon import Lexicon
from poaas.logging_utils import kv_debug, stage_timer, warn
from poaas.merger import Candidate, MergeDecision, merge, prepend_facts
from poaas.util import AgentError, require_text

STAGES = ("analyze", "route", "invoke", "guard", "merge")


@dataclass(frozen=True)
class OptimizationResult:
    input: str
    output: str
    skipped: bool
    profile: QualityProfile
    selected_agents: Tuple[AgentKind, ...]
    candidates: Tuple[Candidate, ...]
    merge: MergeDecision
    stage_timings: Dict[str, float]
    run_id: str
    config_hash: str = ""
    fewshot: Optional[FewShotSegmentation] = None

    @property
    def specialist_calls(self) -> int:
        return len(self.candidates)

    def to_dict(self) -> Dict[str, object]:
        return {
            "run_id": self.run_id,
            "input": self.input,
            "output": self.output,
            "skipped": self.skipped,
            "profile": self.profile.to_dict(),
            "selected_agents": [a.value for a in self.selected_agents],
            "candidates": [c.to_dict() for c in self.candidates],
            "merge": self.merge.to_dict(),
            "timings_ms": {k: round(v, 3) for k, v in self.stage_timings.items()},
            "fewshot_detected": bool(self.fewshot and self.fewshot.detected),
            "config_hash": self.config_hash,
        }


# --------------------------- 路由 ---------------------------
def select_agents(profile: QualityProfile, t: Optional[RoutingThresholds] = None) -> Set[AgentKind]:
    """typo > τ_typo -> Cleaner；comp < τ_comp -> Fact-Adder；flu < τ_flu -> Paraphraser"""
    t = t or RoutingThresholds()
    out: Set[AgentKind] = set()
    if profile.typo > t.tau_typo:
        out.add(AgentKind.CLEANER)
    if profile.comp < t.tau_comp:
        out.add(AgentKind.FACT_ADDER)
    if profile.flu < t.tau_flu:
        out.add(AgentKind.PARAPHRASER)
    return out


# --------------------------- 候选评估 ---------------------------
def _call(kind: AgentKind, query: str, transport: Transport, cfg: PipelineConfig,
          lex: Lexicon) -> SpecialistResponse | AgentError:
    req = SpecialistRequest(kind=kind, input_text=query, generation_cap=cfg.generation_cap)
    try:
        return invoke(req, transport, budget=cfg.budget, lex=lex)
    except AgentError as ex:
        warn(f"[pipeline] {kind.value} dropped: {ex.code}: {ex}")
        return ex
    except Exception as ex:  # 兜底：任何异常都只丢弃该候选
        warn(f"[pipeline] {kind.value} dropped: {ex.__class__.__name__}: {ex}")
        return AgentError(str(ex))

def evaluate_candidate(kind: AgentKind, query: str, outcome: SpecialistResponse | AgentError,
                       profile: QualityProfile, cfg: PipelineConfig, lex: Lexicon,
                       guards: Mapping[str, Guard]) -> Candidate:
    """清洗 + 守卫 + 漂移检查，生成一个（可能被拒的）候选"""
    if isinstance(outcome, AgentError):
        return Candidate(agent=kind, accepted=False, reason=outcome.code)
    resp = outcome
    base = dict(agent=kind, raw_output=resp.raw_output, latency_ms=resp.latency_ms)
    policy = cfg.drift_policy

    if kind is AgentKind.FACT_ADDER:
        if resp.is_none:
            return Candidate(**base, accepted=False, reason="NONE")
        screen = screen_facts(query, parse_bullets(resp.raw_output), cfg.budget, lex)
        if not screen.kept:
            verdict = GuardVerdict.fail(screen.first_reason if screen.dropped else GuardReason.META_COMMENTARY_ONLY)
            return Candidate(**base, guard=verdict, accepted=False, reason=verdict.reason.value)
        verdict = GuardVerdict.ok()
        composed = prepend_facts(query, screen.kept, cfg.budget)
        dv = within_drift(query, composed, kind, profile, policy, lex)
        return Candidate(**base, bullets=screen.kept, guard=verdict, drift=dv.report,
                         accepted=dv.accepted, reason=dv.reason.value)

    if resp.no_change:
        return Candidate(**base, accepted=False, reason="NO_CHANGE")
    text = sanitize(resp.raw_output, lex, original=query)
    if not text:
        verdict = GuardVerdict.fail(GuardReason.META_COMMENTARY_ONLY)
        return Candidate(**base, guard=verdict, accepted=False, reason=verdict.reason.value)
    if text == query:
        dv = within_drift(query, text, kind, profile, policy, lex)
        return Candidate(**base, sanitized_text=text, guard=GuardVerdict.ok(), drift=dv.report,
                         accepted=False, reason="NO_CHANGE")

    verdict = guards[kind.value](query, text)
    if verdict.repaired_text is not None:
        text = verdict.repaired_text
    if not verdict.passed:
        return Candidate(**base, sanitized_text=text, guard=verdict, accepted=False,
                         reason=verdict.reason.value)
    dv = within_drift(query, text, kind, profile, policy, lex)
    return Candidate(**base, sanitized_text=text, guard=verdict, drift=dv.report,
                     accepted=dv.accepted, reason=dv.reason.value)


# --------------------------- 主流程 ---------------------------
def optimize(x: str, cfg: Optional[PipelineConfig] = None, *,
             transports: Optional[Mapping[AgentKind, Transport]] = None,
             guards: Optional[Mapping[str, Guard]] = None,
             observer: Optional[Callable[[OptimizationResult], None]] = None) -> OptimizationResult:
    cfg = cfg or PipelineConfig()
    x = require_text(x)
    lex = cfg.lexicon()
    timings: Dict[str, float] = {s: 0.0 for s in STAGES}
    run_id = str(uuid.uuid4())

    with stage_timer(timings, "analyze"):
        seg = detect_fewshot(x)
        profile = analyze(tokenize(x, lex), cfg.thresholds, lex)

    with stage_timer(timings, "route"):
        skip = should_skip(profile, cfg.thresholds)
        selected = [] if skip else AgentKind.ordered(select_agents(profile, cfg.thresholds))

    if skip or not selected:
        decision = MergeDecision(output=x, fell_back=not skip,
                                 fallback_reason=None if skip else "NO_AGENT_SELECTED")
        result = OptimizationResult(input=x, output=x, skipped=skip, profile=profile,
                                    selected_agents=tuple(selected), candidates=(), merge=decision,
                                    stage_timings=timings, run_id=run_id,
                                    config_hash=cfg.config_hash, fewshot=seg)
        kv_debug("[pipeline] done", run=run_id[:8], skipped=skip, q=profile.q, typo=profile.typo)
        if observer:
            observer(result)
        return result

    transports = transports or build_transports(cfg, lex)
    guards = guards or build_guards(cfg.guard_endpoints, lex=lex, repair=cfg.guard_repair,
                                    timeout=cfg.specialist_timeout_s)
    query = seg.final_query

    with stage_timer(timings, "invoke"):
        workers = max(1, min(len(selected), cfg.max_workers))
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="poaas-agent") as pool:
            futures = {k: pool.submit(_call, k, query, transports[k], cfg, lex) for k in selected}
            outcomes = {k: f.result() for k, f in futures.items()}

    with stage_timer(timings, "guard"):
        candidates = tuple(
            evaluate_candidate(k, query, outcomes[k], profile, cfg, lex, guards) for k in selected
        )

    with stage_timer(timings, "merge"):
        decision = merge(x, candidates, seg, cfg.budget, cfg.drift_policy, profile=profile, lex=lex)

    result = OptimizationResult(input=x, output=decision.output, skipped=False, profile=profile,
                                selected_agents=tuple(selected), candidates=candidates,
                                merge=decision, stage_timings=timings, run_id=run_id,
                                config_hash=cfg.config_hash, fewshot=seg)
    kv_debug("[pipeline] done", run=run_id[:8], agents=",".join(a.value for a in selected),
             applied=",".join(a.value for a in decision.applied_agents) or "-",
             fell_back=decision.fell_back)
    if observer:
        observer(result)
    return result


def run_specialist(kind: AgentKind, text: str, cfg: Optional[PipelineConfig] = None, *,
                   transports: Optional[Mapping[AgentKind, Transport]] = None,
                   guards: Optional[Mapping[str, Guard]] = None) -> Tuple[Candidate, QualityProfile]:
    """单个 specialist 路径（invoke + 清洗 + 守卫 + 漂移），不合并；服务的 /clean 等路由使用"""
    cfg = cfg or PipelineConfig()
    text = require_text(text, "text")
    lex = cfg.lexicon()
    profile = analyze(tokenize(text, lex), cfg.thresholds, lex)
    transports = transports or build_transports(cfg, lex)
    guards = guards or build_guards(cfg.guard_endpoints, lex=lex, repair=cfg.guard_repair,
                                    timeout=cfg.specialist_timeout_s)
    query = detect_fewshot(text).final_query
    outcome = _call(kind, query, transports[kind], cfg, lex)
    return evaluate_candidate(kind, query, outcome, profile, cfg, lex, guards), profile
