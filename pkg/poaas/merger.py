# poaas/merger.py
# ======================================================================
#  漂移受控的候选合并
#  - 工作文本 = few-shot 的最后一个问题（未检测到 few-shot 时即整段提示）
#  - 顺序：Cleaner 替换 -> Paraphraser 替换（对当前工作文本复检漂移） -> 前置事实块
#  - 原样接回 few-shot 前缀
#  - 全局复检：D_final(原查询, 合并查询) ≤ 全局上限，ρ(原文, 结果) ≤ ρ_max
#  - 任何失败都回落为原文（逐字节相同）
# ======================================================================

from __future__ import annotations
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from poaas.agents import AgentKind
from poaas.config import DriftPolicy, TokenBudget
from poaas.drift import DriftReason, DriftReport, DriftVerdict, drift, within_drift
from poaas.guards import FewShotSegmentation, GuardVerdict
from poaas.heuristics import QualityProfile
from poaas.lexicon import Lexicon
from poaas.logging_utils import kv_debug

FACT_SEPARATOR = "\n\n"
# 未提供画像时按“干净输入、清晰度满分”取上限
_NEUTRAL = QualityProfile(typo=0.0, comp=1.0, flu=1.0, clar=1.0, q=1.0)


@dataclass(frozen=True)
class Candidate:
    agent: AgentKind
    sanitized_text: str = ""
    bullets: Tuple[str, ...] = ()
    guard: Optional[GuardVerdict] = None
    drift: Optional[DriftReport] = None
    accepted: bool = False
    reason: str = "OK"
    raw_output: str = ""
    latency_ms: float = 0.0

    def to_dict(self) -> Dict[str, object]:
        return {
            "agent": self.agent.value,
            "raw_output": self.raw_output,
            "sanitized_text": self.sanitized_text,
            "bullets": list(self.bullets),
            "guard": self.guard.to_dict() if self.guard else None,
            "drift": self.drift.to_dict() if self.drift else None,
            "accepted": self.accepted,
            "reason": self.reason,
            "latency_ms": round(self.latency_ms, 3),
        }


@dataclass(frozen=True)
class MergeDecision:
    output: str
    applied_agents: Tuple[AgentKind, ...] = ()
    rejected: Tuple[Tuple[AgentKind, str], ...] = ()
    fell_back: bool = False
    added_prompt_tokens: int = 0
    fact_tokens: int = 0
    fallback_reason: Optional[str] = None
    final_drift: Optional[DriftReport] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "output": self.output,
            "applied_agents": [a.value for a in self.applied_agents],
            "rejected": [[a.value, r] for a, r in self.rejected],
            "fell_back": self.fell_back,
            "added_prompt_tokens": self.added_prompt_tokens,
            "fact_tokens": self.fact_tokens,
            "fallback_reason": self.fallback_reason,
            "final_drift": self.final_drift.to_dict() if self.final_drift else None,
        }


# --------------------------- 事实块 ---------------------------
def fact_block(bullets: Sequence[str], budget: Optional[TokenBudget] = None) -> Tuple[str, int]:
    """渲染 "- " 行；在首个超出 token 预算的条目处截断。返回 (块, token 数)"""
    budget = budget or TokenBudget()
    lines: List[str] = []
    used = 0
    for b in list(bullets)[:budget.fact_bullet_cap]:
        line = f"- {b}"
        n = budget.count(line)
        if used + n > budget.fact_token_cap:
            break
        lines.append(line)
        used += n
    return "\n".join(lines), used

def prepend_facts(query: str, bullets: Sequence[str], budget: Optional[TokenBudget] = None) -> str:
    block, _ = fact_block(bullets, budget)
    return f"{block}{FACT_SEPARATOR}{query}" if block else query


# --------------------------- 合并 ---------------------------
def _pick(candidates: Iterable[Candidate]) -> Dict[AgentKind, Candidate]:
    """每个 agent 取一个已接受候选；同一 agent 多个候选时取文本最小者（与到达顺序无关）"""
    best: Dict[AgentKind, Candidate] = {}
    for c in candidates:
        if not c.accepted:
            continue
        cur = best.get(c.agent)
        key = (c.sanitized_text, c.bullets)
        if cur is None or key < (cur.sanitized_text, cur.bullets):
            best[c.agent] = c
    return best

def _rejections(candidates: Iterable[Candidate]) -> List[Tuple[AgentKind, str]]:
    return sorted(((c.agent, c.reason) for c in candidates if not c.accepted),
                  key=lambda t: (t[0].precedence, t[1]))

def _fallback(original: str, rejected, reason: str, final_drift=None) -> MergeDecision:
    kv_debug("[merger] fallback", reason=reason)
    return MergeDecision(output=original, rejected=tuple(rejected), fell_back=True,
                         fallback_reason=reason, final_drift=final_drift)

def merge(original: str, candidates: Sequence[Candidate], seg: Optional[FewShotSegmentation] = None,
          budget: Optional[TokenBudget] = None, policy: Optional[DriftPolicy] = None, *,
          profile: Optional[QualityProfile] = None, lex: Optional[Lexicon] = None) -> MergeDecision:
    budget = budget or TokenBudget()
    policy = policy or DriftPolicy()
    profile = profile or _NEUTRAL
    seg = seg or FewShotSegmentation(prefix="", final_query=original, detected=False)
    rejected = _rejections(candidates)
    chosen = _pick(candidates)
    if not chosen:
        return _fallback(original, rejected, "NO_CANDIDATES")

    query0 = seg.final_query
    working = query0
    applied: List[AgentKind] = []

    cleaner = chosen.get(AgentKind.CLEANER)
    if cleaner is not None:
        working = cleaner.sanitized_text
        applied.append(AgentKind.CLEANER)

    para = chosen.get(AgentKind.PARAPHRASER)
    if para is not None:
        if applied:
            recheck: DriftVerdict = within_drift(working, para.sanitized_text, AgentKind.PARAPHRASER,
                                                 profile, policy, lex)
            if recheck.accepted:
                working = para.sanitized_text
                applied.append(AgentKind.PARAPHRASER)
            else:
                rejected.append((AgentKind.PARAPHRASER, f"RECHECK_{recheck.reason.value}"))
        else:
            working = para.sanitized_text
            applied.append(AgentKind.PARAPHRASER)

    composed = working
    fact_tokens = 0
    facts = chosen.get(AgentKind.FACT_ADDER)
    if facts is not None and facts.bullets:
        block, fact_tokens = fact_block(facts.bullets, budget)
        if block:
            composed = f"{block}{FACT_SEPARATOR}{working}"
            applied.append(AgentKind.FACT_ADDER)

    if not applied:
        return _fallback(original, rejected, "NOTHING_APPLIED")

    final = seg.reattach(composed)
    final_drift = drift(query0, working, policy, lex)
    if final_drift.D_final > policy.delta_max:
        return _fallback(original, rejected, DriftReason.GLOBAL_CAP.value, final_drift)
    rho = len(final) / len(original) if original else 1.0
    if rho > policy.rho_max:
        return _fallback(original, rejected, DriftReason.LENGTH_RATIO.value, final_drift)

    added = max(0, budget.count(final) - budget.count(original))
    return MergeDecision(output=final, applied_agents=tuple(applied), rejected=tuple(rejected),
                         fell_back=False, added_prompt_tokens=added, fact_tokens=fact_tokens,
                         final_drift=final_drift)
