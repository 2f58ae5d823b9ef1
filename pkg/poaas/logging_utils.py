# poaas/logging_utils.py
# ======================================================================
#  统一日志（rich）
#  - 输出到 stderr：stdout 留给 CLI 的 JSONL / 文本结果
#  - info / warn / error / success / debug + kv_line / kv_table
#  - status 转圈、new_progress 进度条、@step 阶段计时
#  - stage_timer：流水线分阶段耗时（写入 timings 字典，毫秒）
#  - 调用方传入的文本一律 escape；开头的组件标签（"[pipeline]" 等）单独着色
# ======================================================================

from __future__ import annotations
import os, re, time, functools, contextlib, threading
from typing import Iterator, Any, Dict, MutableMapping

from rich.console import Console
from rich.markup import escape
from rich.theme import Theme
from rich.traceback import install as rich_traceback_install
from rich.progress import (
    Progress, SpinnerColumn, BarColumn, TextColumn,
    TimeElapsedColumn, TimeRemainingColumn, MofNCompleteColumn
)
from rich.panel import Panel
from rich.table import Table

# ---------- Config ----------
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()   # DEBUG/INFO/WARN/ERROR
USE_RICH  = os.getenv("LOG_RICH", "1") == "1"        # 0=纯文本
NO_COLOR  = os.getenv("NO_COLOR", "0") == "1"

theme = Theme({
    "ts": "grey62",
    "lvl.debug": "dim",
    "lvl.info": "cyan",
    "lvl.warn": "yellow",
    "lvl.error": "bold red",
    "ok": "bold green",
    "key": "bold white",
    "val": "white",
    "muted": "grey58",
    "tag": "magenta",
})

console = Console(theme=theme, stderr=True, highlight=False,
                  color_system=None if NO_COLOR else "auto")

if USE_RICH:
    rich_traceback_install(console=console, show_locals=False, width=120, word_wrap=True)

# 服务端多线程并发写日志时避免行交错
_lock = threading.Lock()

# ---------- Level gate ----------
_levels = {"DEBUG": 10, "INFO": 20, "WARN": 30, "ERROR": 40}
_cur = _levels.get(LOG_LEVEL, 20)

def set_level(level: str) -> None:
    """运行时调整级别（CLI --verbose / --quiet）"""
    global _cur
    _cur = _levels.get(level.upper(), _cur)

def _enabled(level: str) -> bool:
    return _levels[level] >= _cur

# ---------- Pretty log APIs ----------
_TAGS = {
    "DEBUG": "[lvl.debug]·DBG[/]",
    "INFO":  "[lvl.info]ℹ[/] ",
    "WARN":  "[lvl.warn]⚠[/] ",
    "ERROR": "[lvl.error]✖[/]",
    "OK":    "[ok]✔[/] ",
}

def _ts() -> str:
    return time.strftime("[%H:%M:%S]")

def _log(level: str, body: str, gate: str | None = None) -> None:
    """body 已是 rich markup（调用方负责 escape）"""
    if not _enabled(gate or level):
        return
    with _lock:
        if USE_RICH:
            console.print(f"[ts]{escape(_ts())}[/] {_TAGS[level]} {body}")
        else:
            console.print(f"{_ts()} {level:<5} {body}", markup=False)

# 消息开头的组件标签，如 "[pipeline]" / "[agents]"
_COMPONENT = re.compile(r"^\[[\w:.-]+\]")

def _text(msg: str) -> str:
    if not USE_RICH:
        return msg
    m = _COMPONENT.match(msg)
    if not m:
        return escape(msg)
    return f"[tag]{escape(m.group(0))}[/]{escape(msg[m.end():])}"

def debug(msg: str) -> None:
    _log("DEBUG", _text(msg))

def info(msg: str) -> None:
    _log("INFO", _text(msg))

def warn(msg: str) -> None:
    _log("WARN", _text(msg))

def error(msg: str) -> None:
    _log("ERROR", _text(msg))

def success(msg: str) -> None:
    _log("OK", _text(msg), gate="INFO")

# k=v 样式行
def _kv_parts(kv: Dict[str, Any]) -> str:
    if not USE_RICH:
        return "  ".join(f"{k}={v}" for k, v in kv.items())
    return "  ".join(f"[key]{escape(str(k))}[/]=[val]{escape(str(v))}[/]" for k, v in kv.items())

def kv_line(title: str, **kv: Any) -> None:
    _log("INFO", f"{_text(title)}  {_kv_parts(kv)}" if kv else _text(title))

def kv_debug(title: str, **kv: Any) -> None:
    if _enabled("DEBUG"):
        _log("DEBUG", f"{_text(title)}  {_kv_parts(kv)}")

# 表格
def kv_table(title: str, rows: Dict[str, Any]) -> None:
    if not _enabled("INFO"):
        return
    if not USE_RICH:
        info(title + " " + " ".join(f"{k}={v}" for k, v in rows.items()))
        return
    table = Table(show_header=False, box=None, pad_edge=False)
    table.add_column("k", style="key")
    table.add_column("v", style="val")
    for k, v in rows.items():
        table.add_row(escape(str(k)), escape(str(v)))
    with _lock:
        console.print(Panel(table, title=escape(title), border_style="muted"))

# ---------- Spinners / Progress ----------
@contextlib.contextmanager
def status(text: str, spinner: str = "dots") -> Iterator[None]:
    """with status('Scoring …'): ...；非终端时退化为一行 debug"""
    if not USE_RICH or not console.is_terminal:
        debug(text)
        yield
        return
    with console.status(_text(text), spinner=spinner):
        yield

def new_progress(transient: bool = True) -> Progress:
    """批处理进度条（INFO 以下级别时禁用）"""
    return Progress(
        SpinnerColumn(style="muted"),
        TextColumn("[bold]{task.description}[/]"),
        BarColumn(bar_width=None),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        TimeRemainingColumn(),
        console=console,
        transient=transient,
        expand=True,
        disable=not _enabled("INFO"),
    )

# ---------- Timing ----------
@contextlib.contextmanager
def stage_timer(timings: MutableMapping[str, float], name: str) -> Iterator[None]:
    """累加某阶段耗时（毫秒）；同名阶段多次进入时叠加"""
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = timings.get(name, 0.0) + (time.perf_counter() - t0) * 1000.0

def step(title: str):
    """@step('Batch optimize'): 自动开始/结束+耗时统计"""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*a, **kw):
            info(f"[{title}] start")
            t0 = time.perf_counter()
            try:
                r = fn(*a, **kw)
                success(f"[{title}] done in {time.perf_counter() - t0:.2f}s")
                return r
            except Exception as ex:
                error(f"[{title}] failed after {time.perf_counter() - t0:.2f}s: {ex}")
                raise
        return wrapper
    return deco
