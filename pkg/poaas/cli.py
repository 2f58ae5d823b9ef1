# poaas/cli.py
# ======================================================================
#  命令行入口（typer）
#  - score     逐行打分（四项分数 + q + 是否跳过），JSONL 或表格
#  - optimize  单条提示或整个文件跑流水线；--mock 强制使用确定性 mock
#  - corrupt   输入退化（delete / mixup），--verbose 打印逐行 k
#  - batch     批量评估并输出报告（report_version = 1）
#  - serve     启动 HTTP 服务；preflight 探测端点与数据文件
#  - 退出码：0 成功 / 1 运行时失败 / 2 用法或校验错误；stdout 只写结果，日志走 stderr
# ======================================================================

from __future__ import annotations
import json, sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer
from rich.console import Console
from rich.table import Table

from poaas import __version__
from poaas.agents import AgentKind
from poaas.batch import run_batch
from poaas.config import PipelineConfig, bind_address, load_config
from poaas.degradation import CorruptionSpec, corrupt_lines, read_corpus
from poaas.heuristics import analyze_text, should_skip
from poaas.logging_utils import info, kv_line, kv_table, set_level, status, step, success, warn
from poaas.pipeline import optimize as run_optimize
from poaas.util import ConfigError, ServiceUnavailable, endpoint_ready, run_cli

app = typer.Typer(
    name="poaas",
    help="Minimal-edit prompt optimization: score, optimize, corrupt, batch-evaluate, serve.",
    add_completion=False,
    no_args_is_help=True,
    rich_markup_mode="rich",
)

_AGENT_FAILURES = ("AGENT_ERROR", "AGENT_TIMEOUT", "AGENT_PROTOCOL")


# --------------------------- 公共 ---------------------------
def _read_lines(path: Optional[Path]) -> List[str]:
    """path 为空或 '-' 时读 stdin"""
    if path is None or str(path) == "-":
        return sys.stdin.read().splitlines()
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as ex:
        raise ConfigError(f"cannot read {path}: {getattr(ex, 'strerror', None) or ex}") from None

def _prompts(path: Optional[Path], field: Optional[str]):
    """非空提示记录（纯文本空行跳过）"""
    return [r for r in read_corpus(_read_lines(path), field) if r.prompt.strip()]

def _config(config: Optional[Path], mock: bool) -> PipelineConfig:
    return load_config(config, mock_mode=True if mock else None)

def _emit(obj: Dict[str, Any]) -> None:
    typer.echo(json.dumps(obj, ensure_ascii=False))

def _write_out(lines: List[str], output: Optional[Path]) -> None:
    body = "".join(line + "\n" for line in lines)
    if output is None:
        typer.echo(body, nl=False)
        return
    try:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(body, encoding="utf-8")
    except OSError as ex:
        raise ConfigError(f"cannot write {output}: {ex.strerror or ex}") from None
    kv_line("[cli] wrote", lines=len(lines), path=output)


@app.callback()
def _main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Warnings and errors only"),
) -> None:
    if verbose:
        set_level("DEBUG")
    elif quiet:
        set_level("WARN")


@app.command()
def version() -> None:
    """Print the package version."""
    typer.echo(__version__)


# --------------------------- score ---------------------------
@app.command()
def score(
    file: Optional[Path] = typer.Argument(None, help="Prompt file (one per line); '-' or omitted = stdin"),
    field: Optional[str] = typer.Option(None, "--field", help="Read JSONL and score this field"),
    fmt: str = typer.Option("jsonl", "--format", help="jsonl | table"),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML config file"),
) -> None:
    """Score prompts: typo / completeness / fluency / clarity, q and the skip decision."""
    def main() -> None:
        if fmt not in ("jsonl", "table"):
            raise ConfigError(f"--format must be jsonl or table, got {fmt!r}")
        cfg = _config(config, mock=False)
        lex = cfg.lexicon()
        rows = []
        for rec in _prompts(file, field):
            p = analyze_text(rec.prompt, cfg.thresholds, lex)
            rows.append({"line": rec.line_no, **p.to_dict(), "skip": should_skip(p, cfg.thresholds)})
        if fmt == "jsonl":
            for row in rows:
                _emit(row)
            return
        table = Table("line", "typo", "comp", "flu", "clar", "q", "skip")
        for row in rows:
            table.add_row(str(row["line"]), *(f"{row[k]:.3f}" for k in ("typo", "comp", "flu", "clar", "q")),
                          "yes" if row["skip"] else "no")
        Console(highlight=False).print(table)
    run_cli(main)


# --------------------------- optimize ---------------------------
@app.command()
def optimize(
    prompt: Optional[str] = typer.Argument(None, help="A single prompt (echoes the optimized prompt)"),
    file: Optional[Path] = typer.Option(None, "--file", "-f", help="Prompt file; '-' = stdin"),
    field: Optional[str] = typer.Option(None, "--field", help="JSONL prompt field"),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML config file"),
    mock: bool = typer.Option(False, "--mock", help="Use deterministic mock specialists"),
    workers: int = typer.Option(1, "--workers", min=1, max=64, help="Parallel prompts in file mode"),
) -> None:
    """Optimize one prompt, or every prompt of a file (JSONL decisions on stdout)."""
    def main() -> None:
        if (prompt is None) == (file is None):
            raise ConfigError("give either a PROMPT argument or --file")
        cfg = _config(config, mock)
        if prompt is not None:
            result = run_optimize(prompt, cfg)
            _warn_failures([result])
            typer.echo(result.output)
            return
        records = _prompts(file, field)
        seen: list = []
        report = run_batch([r.prompt for r in records], cfg, workers=workers, observer=seen.append,
                           progress=True)
        _warn_failures(seen)
        for rec, line in zip(records, report.records):
            _emit({"line": rec.line_no, "output": line.output, "skipped": line.skipped,
                   "applied_agents": list(line.applied_agents), "fell_back": line.fell_back,
                   "fallback_reason": line.fallback_reason, "added_prompt_tokens": line.added_prompt_tokens})
        agg = report.aggregates()
        kv_table("optimize", {"prompts": agg["n"], "skip_rate": f"{agg['skip_rate']:.3f}",
                              "fallback_rate": f"{agg['fallback_rate']:.3f}",
                              "config_hash": cfg.short_hash})
    run_cli(main)


def _warn_failures(results) -> int:
    n = sum(1 for r in results for c in r.candidates if c.reason in _AGENT_FAILURES)
    if n:
        warn(f"[cli] {n} specialist call(s) failed; affected prompts fell back")
    return n


# --------------------------- corrupt ---------------------------
@app.command()
def corrupt(
    file: Path = typer.Argument(..., help="Corpus file; '-' = stdin"),
    mode: str = typer.Option("delete", "--mode", help="delete | mixup"),
    rate: float = typer.Option(0.10, "--rate", help="Fraction of word tokens, in (0, 1)"),
    seed: int = typer.Option(0, "--seed", help="64-bit seed"),
    field: Optional[str] = typer.Option(None, "--field", help="JSONL prompt field (other fields untouched)"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Write here instead of stdout"),
    verbose: bool = typer.Option(False, "--verbose", help="Log n/k per line"),
    data_dir: Optional[Path] = typer.Option(None, "--data-dir", help="Data directory (mixup vocabulary)"),
) -> None:
    """Corrupt prompts by deleting or replacing a fraction of word tokens."""
    def main() -> None:
        spec = CorruptionSpec.build(mode=mode, rate=rate, seed=seed)
        records = read_corpus(_read_lines(file), field)
        cfg = load_config(data_dir=str(data_dir) if data_dir else None)
        res = corrupt_lines([r.prompt for r in records], spec, cfg.lexicon())
        if verbose:
            for rec, a in zip(records, res.audits):
                info(f"[corrupt] line {rec.line_no}: " + (f"n={a.n} k={a.k}" if a else "empty"))
        _write_out([rec.render(text, field) for rec, text in zip(records, res.lines)], output)
    run_cli(main)


# --------------------------- batch ---------------------------
@app.command()
def batch(
    file: Path = typer.Argument(..., help="Prompt file; '-' = stdin"),
    field: Optional[str] = typer.Option(None, "--field", help="JSONL prompt field"),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML config file"),
    mock: bool = typer.Option(False, "--mock", help="Use deterministic mock specialists"),
    workers: int = typer.Option(1, "--workers", min=1, max=64),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Write the report JSON here"),
    summary_only: bool = typer.Option(False, "--summary-only", help="Omit per-line records"),
) -> None:
    """Batch-evaluate a corpus and print the report JSON."""
    @step("batch")
    def main() -> None:
        cfg = _config(config, mock)
        records = _prompts(file, field)
        report = run_batch([r.prompt for r in records], cfg, workers=workers, progress=True)
        body = json.dumps(report.to_dict(include_records=not summary_only), ensure_ascii=False, indent=2)
        agg = report.aggregates()
        kv_table("batch report", {
            "prompts": agg["n"],
            "skip_rate": f"{agg['skip_rate']:.3f}",
            "mean_specialist_calls": f"{agg['mean_specialist_calls']:.3f}",
            "fallback_rate": f"{agg['fallback_rate']:.3f}",
            "mean_added_prompt_tokens": f"{agg['mean_added_prompt_tokens']:.2f}",
            "config_hash": cfg.short_hash,
        })
        _write_out([body], output)
    run_cli(main)


# --------------------------- serve ---------------------------
@app.command()
def serve(
    bind: Optional[str] = typer.Option(None, "--bind", help="host:port (default POAAS_BIND or 127.0.0.1:8080)"),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML config file"),
    mock: bool = typer.Option(False, "--mock", help="Use deterministic mock specialists"),
) -> None:
    """Run the HTTP service until SIGTERM/SIGINT (in-flight requests are drained)."""
    def main() -> None:
        from poaas.service import serve as run_service
        cfg = _config(config, mock)
        host, port = bind_address(bind)
        run_service(cfg, host, port)
    run_cli(main)


# --------------------------- preflight ---------------------------
@app.command()
def preflight(
    config: Optional[Path] = typer.Option(None, "--config", help="YAML config file"),
    mock: bool = typer.Option(False, "--mock", help="Check as if mock mode were on"),
) -> None:
    """Check data files and specialist endpoints; exit 1 when unreachable outside mock mode."""
    def main() -> None:
        cfg = _config(config, mock)
        lex = cfg.lexicon()
        rows: Dict[str, Any] = {"data_dir": str(lex.data_dir), "data_files": len(lex.digests),
                                "config_hash": cfg.short_hash}
        problems = []
        for kind in AgentKind.ordered(AgentKind):
            ep = cfg.agent_endpoints.get(kind.value)
            if cfg.mock_mode:
                rows[kind.value] = "mock"
            elif ep is None:
                rows[kind.value] = "not configured"
                problems.append(f"{kind.value}: no endpoint (set {kind.value} URL or use --mock)")
            else:
                with status(f"probing {kind.value} endpoint"):
                    ok = endpoint_ready(ep.url)
                rows[kind.value] = f"{ep.url} {'up' if ok else 'DOWN'}"
                if not ok:
                    problems.append(f"{kind.value}: {ep.url} unreachable")
        for name, url in cfg.guard_endpoints.items():
            ok = endpoint_ready(url)
            rows[f"guard:{name}"] = f"{url} {'up' if ok else 'down (local fallback)'}"
        kv_table("preflight", rows)
        if problems:
            raise ServiceUnavailable("preflight failed:\n  - " + "\n  - ".join(problems))
        success("[preflight] ready")
    run_cli(main)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
