# poaas/agents.py
# ======================================================================
#  Specialist 抽象：Cleaner / Paraphraser / Fact-Adder
#  - 指令模板：jinja2（data/templates/<id>.j2），未知模板 id -> ConfigError
#  - 传输：HTTP（openai chat / completions / ollama 三种报文）或确定性 mock
#  - 统一参数：temperature 0.2 / top_p 0.9 / 固定 seed / max_tokens = 512
#  - 超时 -> AgentTimeout；报文不符 -> AgentProtocolError；不重试（候选直接丢弃）
#  - Fact-Adder 输出 NONE、Paraphraser 输出 NO_CHANGE 均作弃权标记
# ======================================================================

from __future__ import annotations
import re, time
from dataclasses import asdict, dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Tuple

import requests
from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateNotFound

from poaas.config import EndpointConfig, PipelineConfig, TokenBudget
from poaas.heuristics import WH_WORDS
from poaas.lexicon import Lexicon, load_lexicon
from poaas.logging_utils import kv_debug
from poaas.util import AgentError, AgentProtocolError, AgentTimeout, ConfigError, nfc

GENERATION_CAP = 512
TEMPERATURE = 0.2
TOP_P = 0.9
NONE_TOKEN = "NONE"
NO_CHANGE_TOKEN = "NO_CHANGE"


class AgentKind(str, Enum):
    CLEANER = "cleaner"
    PARAPHRASER = "paraphraser"
    FACT_ADDER = "fact_adder"

    @property
    def precedence(self) -> int:
        """合并顺序：Cleaner < Paraphraser < Fact-Adder（前置）"""
        return _PRECEDENCE[self]

    @classmethod
    def ordered(cls, kinds) -> List["AgentKind"]:
        return sorted((cls(k) for k in kinds), key=lambda k: k.precedence)

_PRECEDENCE = {AgentKind.CLEANER: 0, AgentKind.PARAPHRASER: 1, AgentKind.FACT_ADDER: 2}


@dataclass(frozen=True)
class SpecialistRequest:
    kind: AgentKind
    input_text: str
    instruction_template_id: str = ""
    generation_cap: int = GENERATION_CAP

    @property
    def template_id(self) -> str:
        return self.instruction_template_id or self.kind.value


@dataclass(frozen=True)
class SpecialistResponse:
    raw_output: str
    latency_ms: float
    output_token_estimate: int
    is_none: bool = False
    no_change: bool = False

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


# --------------------------- 指令模板 ---------------------------
@lru_cache(maxsize=8)
def _jinja(template_dir: str) -> Environment:
    return Environment(loader=FileSystemLoader(template_dir), undefined=StrictUndefined,
                       autoescape=False, keep_trailing_newline=False)

def render_instruction(kind: AgentKind | str, input_text: str, *, budget: Optional[TokenBudget] = None,
                       lex: Optional[Lexicon] = None) -> str:
    lex = lex or load_lexicon()
    budget = budget or TokenBudget()
    template_id = getattr(kind, "value", kind)
    if not re.fullmatch(r"[a-z][a-z0-9_]*", str(template_id)):
        raise ConfigError(f"unknown instruction template {template_id!r}")
    try:
        tpl = _jinja(str(Path(lex.data_dir) / "templates")).get_template(f"{template_id}.j2")
    except TemplateNotFound:
        raise ConfigError(f"unknown instruction template {template_id!r}") from None
    return tpl.render(input_text=input_text, bullet_cap=budget.fact_bullet_cap,
                      token_cap=budget.fact_token_cap)


# --------------------------- mocks ---------------------------
_TOKEN_PARTS = re.compile(r"^(\W*)(.*?)(\W*)$", re.S)
_RUN3 = re.compile(r"([A-Za-z])\1{2,}")


def _match_case(src: str, word: str) -> str:
    if len(src) > 1 and src.isupper():
        return word.upper()
    if src[:1].isupper():
        return word[:1].upper() + word[1:]
    return word

def _fix_token(tok: str, lex: Lexicon) -> Tuple[str, str]:
    """返回 (修正后的 token, 修正后的规范化词)"""
    lead, core, trail = _TOKEN_PARTS.match(tok).groups()
    norm = core.lower()
    if not norm:
        return tok, ""
    fixed = lex.correct(norm)
    if fixed is None and _RUN3.search(norm):
        single = _RUN3.sub(r"\1", norm)
        fixed = single if single in lex.known_words else _RUN3.sub(r"\1\1", norm)
    if fixed is None:
        return tok, norm
    return f"{lead}{_match_case(core, fixed)}{trail}", fixed

def mock_cleaner(text: str, lex: Optional[Lexicon] = None) -> SpecialistResponse:
    """按纠错表逐词修正；wh 问句补 "?"。保留原有空白"""
    lex = lex or load_lexicon()
    t0 = time.perf_counter()
    first: List[str] = []

    def fix(m: re.Match) -> str:
        out, norm = _fix_token(m.group(0), lex)
        if norm and not first:
            first.append(norm.split()[0])
        return out

    out = re.sub(r"\S+", fix, nfc(text))
    if first and first[0] in WH_WORDS and not out.rstrip().endswith("?"):
        body = out.rstrip()
        out = body.rstrip(".!") + "?" + out[len(body):]
    return _response(out, t0)

def mock_paraphraser(text: str) -> SpecialistResponse:
    """保守：只规整空白并大写首字母"""
    t0 = time.perf_counter()
    out = " ".join(nfc(text).split())
    if out[:1].islower():
        out = out[:1].upper() + out[1:]
    return _response(out, t0)

@lru_cache(maxsize=8)
def _fact_patterns(data_dir: str) -> Tuple[Tuple[re.Pattern, str], ...]:
    lex = load_lexicon(data_dir)
    pats = []
    for key, fact in lex.facts.items():
        flags = 0 if any(c.isupper() for c in key) else re.I
        pats.append((re.compile(r"(?<!\w)" + re.escape(key) + r"(?!\w)", flags), fact))
    return tuple(pats)

def mock_fact_adder(text: str, lex: Optional[Lexicon] = None, budget: Optional[TokenBudget] = None) -> SpecialistResponse:
    """事实表查找：按首次出现位置排序，最多 bullet_cap 条；无命中 -> NONE"""
    lex = lex or load_lexicon()
    budget = budget or TokenBudget()
    t0 = time.perf_counter()
    text = nfc(text)
    hits = []
    for pat, fact in _fact_patterns(str(lex.data_dir)):
        m = pat.search(text)
        if m:
            hits.append((m.start(), fact))
    facts = [f for _, f in sorted(hits)][:budget.fact_bullet_cap]
    if not facts:
        return _response(NONE_TOKEN, t0, is_none=True)
    return _response("\n".join(f"- {f}" for f in facts), t0)

def _response(out: str, t0: float, is_none: bool = False) -> SpecialistResponse:
    return SpecialistResponse(raw_output=out, latency_ms=(time.perf_counter() - t0) * 1000.0,
                              output_token_estimate=len(out.split()), is_none=is_none)


# --------------------------- 传输 ---------------------------
class Transport(Protocol):
    def complete(self, req: SpecialistRequest, instruction: str) -> str: ...


@dataclass
class MockTransport:
    """确定性替身：忽略指令，直接对 input_text 跑 mock"""
    lex: Lexicon
    budget: TokenBudget

    def complete(self, req: SpecialistRequest, instruction: str) -> str:
        if req.kind is AgentKind.CLEANER:
            return mock_cleaner(req.input_text, self.lex).raw_output
        if req.kind is AgentKind.PARAPHRASER:
            return mock_paraphraser(req.input_text).raw_output
        return mock_fact_adder(req.input_text, self.lex, self.budget).raw_output


@dataclass
class FunctionTransport:
    """把任意 (input_text) -> text 函数包装成传输（测试 / 故障注入）"""
    fn: Callable[[str], str]

    def complete(self, req: SpecialistRequest, instruction: str) -> str:
        return self.fn(req.input_text)


@dataclass
class MissingEndpoint:
    kind: AgentKind

    def complete(self, req: SpecialistRequest, instruction: str) -> str:
        raise AgentError(f"no endpoint configured for {self.kind.value}")


class HttpTransport:
    """OpenAI 兼容 / completions / ollama 三种报文；单次调用，不重试"""

    def __init__(self, endpoint: EndpointConfig, timeout: float = 10.0, seed: int = 0,
                 session: Optional[requests.Session] = None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.seed = seed
        self.session = session or requests.Session()

    def _post_json(self, url: str, payload: dict) -> dict:
        headers = {}
        if self.endpoint.api_key:
            headers["Authorization"] = f"Bearer {self.endpoint.api_key}"
        try:
            r = self.session.post(url, json=payload, headers=headers, timeout=self.timeout)
            r.raise_for_status()
        except requests.Timeout:
            raise AgentTimeout(f"timeout after {self.timeout}s: {url}") from None
        except requests.RequestException as ex:
            raise AgentError(f"request failed: {url}: {ex.__class__.__name__}") from None
        try:
            js = r.json()
        except ValueError:
            raise AgentProtocolError(f"non-JSON response from {url}") from None
        if not isinstance(js, dict):
            raise AgentProtocolError(f"unexpected response shape from {url}")
        return js

    def complete(self, req: SpecialistRequest, instruction: str) -> str:
        ep = self.endpoint
        base = ep.url.rstrip("/")
        try:
            if ep.wire == "ollama":
                js = self._post_json(f"{base}/api/generate", {
                    "model": ep.model, "prompt": instruction, "stream": False,
                    "options": {"temperature": TEMPERATURE, "top_p": TOP_P, "seed": self.seed,
                                "num_predict": req.generation_cap},
                })
                out = js["response"]
            elif ep.wire == "completions":
                js = self._post_json(f"{base}/completions", {
                    "model": ep.model, "prompt": instruction, "max_tokens": req.generation_cap,
                    "temperature": TEMPERATURE, "top_p": TOP_P, "seed": self.seed,
                })
                out = js["choices"][0]["text"]
            else:
                js = self._post_json(f"{base}/chat/completions", {
                    "model": ep.model, "messages": [{"role": "user", "content": instruction}],
                    "max_tokens": req.generation_cap, "temperature": TEMPERATURE,
                    "top_p": TOP_P, "seed": self.seed,
                })
                out = js["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise AgentProtocolError(f"malformed {ep.wire} response from {base}") from None
        if not isinstance(out, str):
            raise AgentProtocolError(f"non-text completion from {base}")
        return out


def build_transports(cfg: PipelineConfig, lex: Optional[Lexicon] = None) -> Dict[AgentKind, Transport]:
    lex = lex or cfg.lexicon()
    if cfg.mock_mode:
        mock = MockTransport(lex=lex, budget=cfg.budget)
        return {k: mock for k in AgentKind}
    out: Dict[AgentKind, Transport] = {}
    for k in AgentKind:
        ep = cfg.agent_endpoints.get(k.value)
        out[k] = HttpTransport(ep, timeout=cfg.specialist_timeout_s, seed=cfg.seed) if ep else MissingEndpoint(k)
    return out


# --------------------------- 调用 ---------------------------
def invoke(req: SpecialistRequest, transport: Transport, *, budget: Optional[TokenBudget] = None,
           lex: Optional[Lexicon] = None) -> SpecialistResponse:
    """
    渲染指令 -> transport.complete -> 记录耗时 / token 估计 / 弃权标记
    传输层的非 AgentError 异常统一包装为 AgentError
    """
    budget = budget or TokenBudget()
    instruction = render_instruction(req.template_id, req.input_text, budget=budget, lex=lex)
    t0 = time.perf_counter()
    try:
        raw = transport.complete(req, instruction)
    except AgentError:
        raise
    except Exception as ex:
        raise AgentError(f"{req.kind.value} transport error: {ex.__class__.__name__}: {ex}") from ex
    latency = (time.perf_counter() - t0) * 1000.0
    if not isinstance(raw, str):
        raise AgentProtocolError(f"{req.kind.value} returned {type(raw).__name__}, expected text")

    out = raw.strip()
    marker = out.strip("`\"' .").upper()
    is_none = req.kind is AgentKind.FACT_ADDER and marker == NONE_TOKEN
    no_change = req.kind is not AgentKind.FACT_ADDER and marker == NO_CHANGE_TOKEN
    if is_none:
        out = NONE_TOKEN
    elif no_change:
        out = NO_CHANGE_TOKEN
    resp = SpecialistResponse(raw_output=out, latency_ms=latency,
                              output_token_estimate=budget.count(out),
                              is_none=is_none, no_change=no_change)
    kv_debug(f"[agents] {req.kind.value}", ms=f"{latency:.1f}", tokens=resp.output_token_estimate,
             none=is_none, no_change=no_change)
    return resp
