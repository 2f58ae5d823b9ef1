# poaas/drift.py
# ======================================================================
#  词汇漂移度量（纯 CPU 集成相似度）
#  - sim = 0.5·S_seq + 0.3·(0.6·J_char3 + 0.4·J_word2) + 0.2·S_tok；D = 1 − sim
#  - 关键项（数字 / 引号片段 / URL·邮箱 / 连续大写实体）保留率 P
#  - D_final = D（P ≥ 0.8），否则 min(1, D + 0.2·(1−P))
#  - within_drift：按 agent 选上限，叠加全局上限 δ_max、长度比 ρ_max、2× 清洗长度
#  - 两侧皆空的分量按 1.0 处理（恒等编辑漂移为 0）
# ======================================================================

from __future__ import annotations
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from difflib import SequenceMatcher
from enum import Enum
from typing import Dict, Optional, Tuple

from poaas.config import DriftPolicy
from poaas.lexicon import Lexicon, load_lexicon, normalize_token
from poaas.util import EmptyInput, nfc

W_SEQ, W_JAC, W_TOK = 0.5, 0.3, 0.2
W_CHAR, W_WORD = 0.6, 0.4
STOPWORD_WEIGHT = 0.2

# 关键项正则
_URL = re.compile(r"https?://[^\s<>\"'“”]+|www\.[^\s<>\"'“”]+", re.I)
_EMAIL = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")
_QUOTED = re.compile(r"\"([^\"\n]+)\"|“([^”\n]+)”")
_NUMBER = re.compile(r"(?<![\w.])\d+(?:[.,]\d+)*(?![\w])")
_TRAILING = ".,;:!?)]}\"'”’"
_BREAK = re.compile(r"[.!?;:,]$")


def _norm(s: str) -> str:
    """小写 + 空白归一"""
    return " ".join(nfc(s).lower().split())

def _words(s: str) -> Tuple[str, ...]:
    return tuple(w for w in (normalize_token(t) for t in nfc(s).split()) if w)


# --------------------------- 相似度分量 ---------------------------
def seq_ratio(a: str, b: str) -> float:
    """Ratcliff–Obershelp（difflib，关闭 autojunk）；两侧皆空 -> 1.0"""
    a, b = _norm(a), _norm(b)
    if not a and not b:
        return 1.0
    return SequenceMatcher(None, a, b, autojunk=False).ratio()

def _jaccard(x: set, y: set) -> float:
    if not x and not y:
        return 1.0
    return len(x & y) / len(x | y)

def char_ngrams(s: str, n: int = 3) -> set:
    s = _norm(s)
    return {s[i:i + n] for i in range(len(s) - n + 1)}

def word_ngrams(s: str, n: int = 2) -> set:
    w = _words(s)
    return {w[i:i + n] for i in range(len(w) - n + 1)}

def char_ngram_jaccard(a: str, b: str, n: int = 3) -> float:
    return _jaccard(char_ngrams(a, n), char_ngrams(b, n))

def word_ngram_jaccard(a: str, b: str, n: int = 2) -> float:
    return _jaccard(word_ngrams(a, n), word_ngrams(b, n))

def weighted_token_overlap(a: str, b: str, lex: Optional[Lexicon] = None) -> float:
    """Σ_{∩} w / Σ_{∪} w，停用词权重 0.2，其余 1"""
    lex = lex or load_lexicon()
    x, y = set(_words(a)), set(_words(b))
    if not x and not y:
        return 1.0
    w = lambda t: STOPWORD_WEIGHT if lex.is_stopword(t) else 1.0
    return sum(w(t) for t in x & y) / sum(w(t) for t in x | y)


# --------------------------- 报告 ---------------------------
@dataclass(frozen=True)
class DriftReport:
    s_seq: float
    s_jac: float
    s_tok: float
    sim: float
    D: float
    P_content: float = 1.0
    D_final: float = 0.0
    rho: float = 1.0
    j_char3: float = 1.0
    j_word2: float = 1.0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _rho(x: str, x2: str) -> float:
    return len(x2) / len(x) if x else 1.0

def similarity(a: str, b: str, lex: Optional[Lexicon] = None) -> DriftReport:
    a, b = nfc(a), nfc(b)
    s_seq = seq_ratio(a, b)
    jc = char_ngram_jaccard(a, b, 3)
    jw = word_ngram_jaccard(a, b, 2)
    s_jac = W_CHAR * jc + W_WORD * jw
    s_tok = weighted_token_overlap(a, b, lex)
    sim = W_SEQ * s_seq + W_JAC * s_jac + W_TOK * s_tok
    sim = min(1.0, max(0.0, sim))
    d = 1.0 - sim
    return DriftReport(s_seq=s_seq, s_jac=s_jac, s_tok=s_tok, sim=sim, D=d,
                       P_content=1.0, D_final=d, rho=_rho(a, b), j_char3=jc, j_word2=jw)


# --------------------------- 关键项 ---------------------------
@dataclass(frozen=True)
class KeyItems:
    numbers: Counter = field(default_factory=Counter)
    quoted: Counter = field(default_factory=Counter)
    urls_emails: Counter = field(default_factory=Counter)
    entities: Counter = field(default_factory=Counter)

    @property
    def M(self) -> int:
        return sum(self.numbers.values()) + sum(self.quoted.values()) \
            + sum(self.urls_emails.values()) + sum(self.entities.values())

    def to_dict(self) -> Dict[str, list]:
        return {
            "numbers": sorted(self.numbers.elements()),
            "quoted": sorted(self.quoted.elements()),
            "urls_emails": sorted(self.urls_emails.elements()),
            "entities": sorted(self.entities.elements()),
        }


def _mask(text: str, spans) -> str:
    out = list(text)
    for s, e in spans:
        for i in range(s, e):
            out[i] = " "
    return "".join(out)

def _norm_number(tok: str) -> str:
    return tok.replace(",", "")

def _entity_spans(text: str) -> list[str]:
    """连续 ≥2 个首字母大写 token 组成一个实体；句读标点处断开；句首词不计"""
    spans, run = [], []
    sentence_start = True
    for raw in text.split():
        core = raw.strip(_TRAILING + "(\"'“‘[{")
        first, sentence_start = sentence_start, bool(re.search(r"[.!?]$", raw))
        if core[:1].isupper() and not first:
            run.append(core)
            if _BREAK.search(raw):
                if len(run) >= 2:
                    spans.append(" ".join(run))
                run = []
            continue
        if len(run) >= 2:
            spans.append(" ".join(run))
        run = []
    if len(run) >= 2:
        spans.append(" ".join(run))
    return spans

def _scan(x: str) -> Tuple[KeyItems, str, str]:
    """抽取关键项；另返回两级屏蔽文本（去 URL·邮箱 / 再去引号片段），供保留计数按同一口径扫描"""
    urls = [m for m in _URL.finditer(x)]
    emails = [m for m in _EMAIL.finditer(x)]
    url_items = [m.group(0).rstrip(_TRAILING).lower() for m in urls + emails]
    no_urls = _mask(x, [m.span() for m in urls + emails])

    quotes = list(_QUOTED.finditer(no_urls))
    quoted = [(m.group(1) or m.group(2)).strip() for m in quotes]
    masked = _mask(no_urls, [m.span() for m in quotes])

    numbers = [_norm_number(m.group(0)) for m in _NUMBER.finditer(masked)]
    items = KeyItems(
        numbers=Counter(numbers),
        quoted=Counter(q for q in quoted if q),
        urls_emails=Counter(url_items),
        entities=Counter(_entity_spans(masked)),
    )
    return items, no_urls, masked

def extract_key_items(x: str) -> KeyItems:
    return _scan(nfc(x or ""))[0]


def _entity_occurrences(ent: str, words: Tuple[str, ...]) -> int:
    target = tuple(ent.casefold().split())
    k = len(target)
    return sum(1 for i in range(len(words) - k + 1) if words[i:i + k] == target)

def preserved_count(items: KeyItems, x2: str) -> int:
    """
    x 的关键项在 x2 中出现的次数（按多重度封顶）
    x2 与 x 走同一套屏蔽与抽取：数字 / URL 比对抽取结果，引号片段在去 URL 文本中找子串，
    实体在完全屏蔽的文本中按词序匹配。恒等编辑 P = 1
    """
    found, no_urls, masked = _scan(nfc(x2 or ""))
    words2 = tuple(w.strip(_TRAILING + "(\"'“‘[{").casefold() for w in masked.split())
    c = 0
    for num, k in items.numbers.items():
        c += min(k, found.numbers.get(num, 0))
    for q, k in items.quoted.items():
        c += min(k, no_urls.count(q))
    for u, k in items.urls_emails.items():
        c += min(k, found.urls_emails.get(u, 0))
    for ent, k in items.entities.items():
        c += min(k, _entity_occurrences(ent, words2))
    return c

def preservation_ratio(x: str, x2: str) -> float:
    items = extract_key_items(x)
    if items.M == 0:
        return 1.0
    return preserved_count(items, x2) / items.M


# --------------------------- 漂移 ---------------------------
def drift(x: str, x2: str, policy: Optional[DriftPolicy] = None,
          lex: Optional[Lexicon] = None) -> DriftReport:
    policy = policy or DriftPolicy()
    x, x2 = nfc(x or ""), nfc(x2 or "")
    if not x:
        raise EmptyInput("original text is empty")
    base = similarity(x, x2, lex)
    p = preservation_ratio(x, x2)
    if p >= policy.preservation_floor:
        d_final = base.D
    else:
        d_final = min(1.0, base.D + policy.penalty_weight * (1.0 - p))
    return DriftReport(s_seq=base.s_seq, s_jac=base.s_jac, s_tok=base.s_tok, sim=base.sim,
                       D=base.D, P_content=p, D_final=d_final, rho=_rho(x, x2),
                       j_char3=base.j_char3, j_word2=base.j_word2)


class DriftReason(str, Enum):
    OK = "OK"
    GLOBAL_CAP = "GLOBAL_CAP"
    DRIFT_EXCEEDED = "DRIFT_EXCEEDED"
    LENGTH_RATIO = "LENGTH_RATIO"
    OVER_LENGTH = "OVER_LENGTH"


@dataclass(frozen=True)
class DriftVerdict:
    accepted: bool
    reason: DriftReason
    report: DriftReport
    cap: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return {"accepted": self.accepted, "reason": self.reason.value,
                "cap": self.cap, "report": self.report.to_dict()}


def agent_cap(agent: str, profile, policy: DriftPolicy) -> Optional[float]:
    """Cleaner / Paraphraser 的漂移上限；Fact-Adder 不受漂移约束（None）"""
    agent = getattr(agent, "value", agent)
    if agent == "cleaner":
        return policy.cleaner_cap(profile.typo)
    if agent == "paraphraser":
        return policy.paraphraser_cap(profile.clar)
    return None

def within_drift(x: str, x2: str, agent, profile, policy: Optional[DriftPolicy] = None,
                 lex: Optional[Lexicon] = None) -> DriftVerdict:
    """
    Fact-Adder 的 x2 应是“事实块 + 查询”的组合文本：只检查长度比 ρ。
    其余 agent：全局上限 -> agent 上限 -> ρ_max -> 清洗后长度 ≤ 2×原文。
    """
    policy = policy or DriftPolicy()
    x = nfc(x or "")
    if not x.strip():
        raise EmptyInput("original text is empty")
    rep = drift(x, x2, policy, lex)
    cap = agent_cap(agent, profile, policy)

    def verdict(reason: DriftReason) -> DriftVerdict:
        return DriftVerdict(accepted=reason is DriftReason.OK, reason=reason, report=rep, cap=cap)

    if cap is not None:
        if rep.D_final > policy.delta_max:
            return verdict(DriftReason.GLOBAL_CAP)
        if rep.D_final > cap:
            return verdict(DriftReason.DRIFT_EXCEEDED)
    if rep.rho > policy.rho_max:
        return verdict(DriftReason.LENGTH_RATIO)
    if cap is not None and len(nfc(x2)) > policy.sanitized_length_factor * len(x):
        return verdict(DriftReason.OVER_LENGTH)
    return verdict(DriftReason.OK)
