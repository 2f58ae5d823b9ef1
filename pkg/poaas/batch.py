# poaas/batch.py
# ======================================================================
#  批量评估报告
#  - 逐行记录：跳过 / 选中与应用的 agent / 回落 / 新增 token / 分阶段耗时
#  - 汇总：跳过率、每查询平均 specialist 调用数、各 agent 选中率与应用率、
#          回落率、平均新增 token、平均精修耗时（只统计未跳过的行）
#  - 汇总值完全可由逐行记录重算；report_version = 1
#  - 可并行处理，输出顺序与输入顺序一致
# ======================================================================

from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from poaas.agents import AgentKind, Transport, build_transports
from poaas.config import PipelineConfig
from poaas.guards import Guard, build_guards
from poaas.logging_utils import kv_debug, new_progress
from poaas.pipeline import OptimizationResult, optimize

REPORT_VERSION = 1
AGENTS = tuple(k.value for k in AgentKind.ordered(AgentKind))


@dataclass(frozen=True)
class LineRecord:
    index: int
    input: str
    output: str
    skipped: bool
    selected_agents: Tuple[str, ...]
    applied_agents: Tuple[str, ...]
    fell_back: bool
    fallback_reason: Optional[str]
    added_prompt_tokens: int
    specialist_calls: int
    timings_ms: Dict[str, float] = field(default_factory=dict)
    run_id: str = ""

    @property
    def latency_ms(self) -> float:
        return sum(self.timings_ms.values())

    @classmethod
    def from_result(cls, index: int, r: OptimizationResult) -> "LineRecord":
        return cls(
            index=index,
            input=r.input,
            output=r.output,
            skipped=r.skipped,
            selected_agents=tuple(a.value for a in r.selected_agents),
            applied_agents=tuple(a.value for a in r.merge.applied_agents),
            fell_back=r.merge.fell_back,
            fallback_reason=r.merge.fallback_reason,
            added_prompt_tokens=r.merge.added_prompt_tokens,
            specialist_calls=r.specialist_calls,
            timings_ms={k: round(v, 3) for k, v in r.stage_timings.items()},
            run_id=r.run_id,
        )

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["selected_agents"] = list(self.selected_agents)
        d["applied_agents"] = list(self.applied_agents)
        return d


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


@dataclass(frozen=True)
class BatchReport:
    records: Tuple[LineRecord, ...]
    config_hash: str = ""

    @property
    def n(self) -> int:
        return len(self.records)

    def aggregates(self) -> Dict[str, Any]:
        rs = self.records
        n = len(rs)
        refined = [r for r in rs if not r.skipped]
        return {
            "n": n,
            "skip_rate": _mean([1.0 if r.skipped else 0.0 for r in rs]),
            "mean_specialist_calls": _mean([r.specialist_calls for r in rs]),
            "selection_rate": {a: _mean([1.0 if a in r.selected_agents else 0.0 for r in rs]) for a in AGENTS},
            "application_rate": {a: _mean([1.0 if a in r.applied_agents else 0.0 for r in rs]) for a in AGENTS},
            "fallback_rate": _mean([1.0 if r.fell_back else 0.0 for r in rs]),
            "mean_added_prompt_tokens": _mean([r.added_prompt_tokens for r in rs]),
            "mean_refinement_latency_ms": _mean([r.latency_ms for r in refined]),
        }

    def deterministic_view(self) -> Dict[str, Any]:
        """去掉计时与 run_id，用于跨运行比较"""
        agg = self.aggregates()
        agg.pop("mean_refinement_latency_ms")
        lines = []
        for r in self.records:
            d = r.to_dict()
            d.pop("timings_ms")
            d.pop("run_id")
            lines.append(d)
        return {"aggregates": agg, "records": lines, "config_hash": self.config_hash}

    def to_dict(self, include_records: bool = True) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "report_version": REPORT_VERSION,
            "config_hash": self.config_hash,
            "aggregates": self.aggregates(),
        }
        if include_records:
            out["records"] = [r.to_dict() for r in self.records]
        return out


def build_report(results: Sequence[OptimizationResult], config_hash: str = "") -> BatchReport:
    records = tuple(LineRecord.from_result(i, r) for i, r in enumerate(results))
    if not config_hash and results:
        config_hash = results[0].config_hash
    return BatchReport(records=records, config_hash=config_hash)


def run_batch(prompts: Sequence[str], cfg: Optional[PipelineConfig] = None, *,
              transports: Optional[Mapping[AgentKind, Transport]] = None,
              guards: Optional[Mapping[str, Guard]] = None,
              workers: int = 1,
              observer: Optional[Callable[[OptimizationResult], None]] = None,
              progress: bool = False) -> BatchReport:
    """逐条 optimize；workers > 1 时并行，结果按输入顺序排列"""
    cfg = cfg or PipelineConfig()
    lex = cfg.lexicon()
    transports = transports or build_transports(cfg, lex)
    guards = guards or build_guards(cfg.guard_endpoints, lex=lex, repair=cfg.guard_repair,
                                    timeout=cfg.specialist_timeout_s)

    def one(p: str) -> OptimizationResult:
        return optimize(p, cfg, transports=transports, guards=guards, observer=observer)

    results: List[OptimizationResult] = []
    if progress and prompts:
        with new_progress() as prog:
            task = prog.add_task("optimize", total=len(prompts))
            with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
                for r in pool.map(one, prompts):
                    results.append(r)
                    prog.advance(task)
    else:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(one, prompts))

    report = build_report(results, cfg.config_hash)
    kv_debug("[batch] done", n=report.n, workers=workers, skip_rate=round(report.aggregates()["skip_rate"], 3))
    return report
