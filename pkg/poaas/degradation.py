# poaas/degradation.py
# ======================================================================
#  输入退化（鲁棒性实验用）
#  - 只扰动提示文本：按比例 r 删除（delete）或替换（mixup）词 token
#  - k = round_half_up(r·n)；SplitMix64 + 部分 Fisher–Yates 选位置，跨平台可复现
#  - 附着在词上的标点视为该 token 的一部分（删词会连带删掉 "?"）
#  - 语料：逐行种子 = mix(seed, 行号)，与处理顺序无关；空行原样透传并计数
#  - 语料 I/O：纯文本（一行一个提示）或 JSONL（--field 指定字段，其余字段不动）
# ======================================================================

from __future__ import annotations
import json
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_UP
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from poaas.lexicon import Lexicon, load_lexicon
from poaas.logging_utils import kv_debug, warn
from poaas.util import ConfigError, EmptyInput, nfc

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
VOCABULARIES = ("default",)


# --------------------------- SplitMix64 ---------------------------
def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def below(self, n: int) -> int:
        """[0, n) 上的均匀整数（拒绝采样，无取模偏差）"""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next()
            if v < limit:
                return v % n


def line_seed(seed: int, index: int) -> int:
    return mix64((seed & MASK64) ^ mix64((index + 1) * GOLDEN_GAMMA))


def round_half_up(x: Decimal | float) -> int:
    return int(Decimal(str(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def affected_count(rate: float, n: int) -> int:
    return round_half_up(Decimal(str(rate)) * n)


# --------------------------- 参数 ---------------------------
class CorruptionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: Literal["delete", "mixup"] = "delete"
    rate: float = Field(0.10, gt=0, lt=1)
    seed: int = Field(0, ge=0, le=MASK64)
    vocab_id: str = "default"

    @classmethod
    def build(cls, **kw: Any) -> "CorruptionSpec":
        try:
            spec = cls(**kw)
        except ValidationError as ex:
            first = ex.errors()[0]
            loc = ".".join(str(x) for x in first.get("loc", ())) or "spec"
            raise ConfigError(f"invalid corruption spec: {loc}: {first.get('msg', 'invalid')}") from None
        if spec.vocab_id not in VOCABULARIES:
            raise ConfigError(f"unknown vocab_id {spec.vocab_id!r} (known: {', '.join(VOCABULARIES)})")
        return spec

    def for_line(self, index: int) -> "CorruptionSpec":
        return self.model_copy(update={"seed": line_seed(self.seed, index)})


@dataclass(frozen=True)
class Corruption:
    text: str
    n: int
    k: int
    positions: Tuple[int, ...]


# --------------------------- 单条 ---------------------------
def _vocabulary(spec: CorruptionSpec, lex: Optional[Lexicon]) -> Tuple[str, ...]:
    vocab = (lex or load_lexicon()).mixup_vocab
    if not vocab:
        raise ConfigError("mixup vocabulary is empty")
    return vocab

def corrupt_detailed(text: str, spec: CorruptionSpec, lex: Optional[Lexicon] = None) -> Corruption:
    tokens = nfc(text).split()
    if not tokens:
        raise EmptyInput("text has no word tokens")
    n = len(tokens)
    k = affected_count(spec.rate, n)
    if k == 0:
        return Corruption(text=" ".join(tokens), n=n, k=0, positions=())

    rng = SplitMix64(spec.seed)
    idx = list(range(n))
    for i in range(k):
        j = i + rng.below(n - i)
        idx[i], idx[j] = idx[j], idx[i]
    chosen = idx[:k]

    if spec.mode == "delete":
        drop = set(chosen)
        out = [t for i, t in enumerate(tokens) if i not in drop]
    else:
        vocab = _vocabulary(spec, lex)
        out = list(tokens)
        for pos in chosen:
            word = vocab[rng.below(len(vocab))]
            while word == tokens[pos] and len(vocab) > 1:
                word = vocab[rng.below(len(vocab))]
            out[pos] = word
    return Corruption(text=" ".join(out), n=n, k=k, positions=tuple(sorted(chosen)))

def corrupt(text: str, spec: CorruptionSpec, lex: Optional[Lexicon] = None) -> str:
    return corrupt_detailed(text, spec, lex).text


# --------------------------- 语料 ---------------------------
@dataclass(frozen=True)
class CorpusCorruption:
    lines: Tuple[str, ...]
    audits: Tuple[Optional[Corruption], ...]
    empty_lines: int = 0


def corrupt_lines(lines: Sequence[str], spec: CorruptionSpec, lex: Optional[Lexicon] = None,
                  start: int = 0) -> CorpusCorruption:
    """start：首行的语料行号（分片处理时保证种子与整体处理一致）"""
    lex = lex or (load_lexicon() if spec.mode == "mixup" else None)
    out: List[str] = []
    audits: List[Optional[Corruption]] = []
    empty = 0
    for i, line in enumerate(lines, start):
        try:
            c = corrupt_detailed(line, spec.for_line(i), lex)
        except EmptyInput:
            empty += 1
            out.append(line)
            audits.append(None)
            continue
        out.append(c.text)
        audits.append(c)
    if empty:
        warn(f"[corrupt] {empty} empty line(s) passed through unchanged")
    kv_debug("[corrupt] corpus", mode=spec.mode, rate=spec.rate, seed=spec.seed, lines=len(out), empty=empty)
    return CorpusCorruption(lines=tuple(out), audits=tuple(audits), empty_lines=empty)

def corrupt_corpus(lines: Sequence[str], spec: CorruptionSpec, lex: Optional[Lexicon] = None) -> List[str]:
    return list(corrupt_lines(lines, spec, lex).lines)


# --------------------------- 语料 I/O ---------------------------
@dataclass(frozen=True)
class CorpusRecord:
    line_no: int
    prompt: str
    raw: Optional[Dict[str, Any]] = None  # JSONL 原记录；纯文本为 None

    def render(self, prompt: str, field: Optional[str]) -> str:
        if self.raw is None or field is None:
            return prompt
        return json.dumps({**self.raw, field: prompt}, ensure_ascii=False)


def read_corpus(lines: Iterable[str], field: Optional[str] = None) -> List[CorpusRecord]:
    """
    field 为 None：纯文本，每行一个提示（保留空行以维持行号对齐）
    field 非空：JSONL，空行跳过；坏记录 / 缺字段 -> ConfigError（带行号）
    """
    out: List[CorpusRecord] = []
    for no, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if field is None:
            out.append(CorpusRecord(line_no=no, prompt=line))
            continue
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as ex:
            raise ConfigError(f"line {no}: malformed JSONL record ({ex.msg})") from None
        if not isinstance(rec, dict):
            raise ConfigError(f"line {no}: JSONL record must be an object")
        value = rec.get(field)
        if not isinstance(value, str):
            raise ConfigError(f"line {no}: field {field!r} missing or not a string")
        out.append(CorpusRecord(line_no=no, prompt=value, raw=rec))
    return out
