# poaas/artifacts.py
# ======================================================================
#  运行产物（JSONL，按日期轮转，只追加）
#  - 每个请求一行：run_id / 时间戳 / 输入 / 候选文本 / 守卫结论 / 漂移报告 / 合并决策 / 计时 / config_hash
#  - 单锁串行写：多线程服务下每条记录完整落盘
#  - 文件名：runs-YYYY-MM-DD.jsonl（UTC）
# ======================================================================

from __future__ import annotations
import json, threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

from poaas.logging_utils import debug
from poaas.pipeline import OptimizationResult


def build_artifact(result: OptimizationResult, route: str = "/infer",
                   now: Optional[datetime] = None) -> Dict[str, Any]:
    ts = (now or datetime.now(timezone.utc)).isoformat(timespec="milliseconds")
    d = result.to_dict()
    return {
        "run_id": d["run_id"],
        "timestamp": ts,
        "route": route,
        "input": d["input"],
        "output": d["output"],
        "skipped": d["skipped"],
        "profile": d["profile"],
        "selected_agents": d["selected_agents"],
        "candidates": d["candidates"],
        "merge": d["merge"],
        "timings_ms": d["timings_ms"],
        "config_hash": d["config_hash"],
    }


class ArtifactStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def path_for(self, when: Optional[datetime] = None) -> Path:
        day = (when or datetime.now(timezone.utc)).strftime("%Y-%m-%d")
        return self.root / f"runs-{day}.jsonl"

    def append(self, record: Dict[str, Any], when: Optional[datetime] = None) -> Path:
        line = json.dumps(record, ensure_ascii=False, sort_keys=True)
        path = self.path_for(when)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("a", encoding="utf-8") as f:
                f.write(line + "\n")
        debug(f"[artifacts] {record.get('run_id', '?')[:8]} -> {path.name}")
        return path

    def persist(self, result: OptimizationResult, route: str = "/infer") -> Path:
        now = datetime.now(timezone.utc)
        return self.append(build_artifact(result, route, now), now)

    def iter_records(self) -> Iterator[Dict[str, Any]]:
        if not self.root.is_dir():
            return
        for p in sorted(self.root.glob("runs-*.jsonl")):
            with p.open(encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        yield json.loads(line)
