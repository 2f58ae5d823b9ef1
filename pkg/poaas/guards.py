# poaas/guards.py
# ======================================================================
#  确定性安全过滤
#  - sanitize：剥离元评论开头（原文自带的除外）/ 整体引号 / 列表符号 / markdown 围栏（幂等）
#  - cleaner_guard：新增内容词必须来自纠错表，或与原词编辑距离 ≤ 2；关键项不得丢失
#  - paraphrase_guard：关键项不得丢失 / 新增；问句不得变陈述（可选修复）
#  - screen_facts / fact_guard：答案泄露、推理标记、选项字母、裸数字、无依据、预算
#  - detect_fewshot：≥2 个已作答示例时只允许编辑最后一个问题
#  - 守卫可插拔：RemoteGuard 调外部模型守卫，失败时回落到确定性实现
# ======================================================================

from __future__ import annotations
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import requests
from rapidfuzz.distance import Levenshtein

from poaas.config import TokenBudget
from poaas.drift import KeyItems, extract_key_items, preserved_count
from poaas.lexicon import Lexicon, load_lexicon, normalize_token
from poaas.logging_utils import debug, warn
from poaas.util import nfc

MAX_EDIT_DISTANCE = 2


class GuardReason(str, Enum):
    OK = "OK"
    NEW_CONTENT = "NEW_CONTENT"
    DROPPED_CONSTRAINT = "DROPPED_CONSTRAINT"
    LOST_QUESTION_MARK = "LOST_QUESTION_MARK"
    ANSWER_LEAKAGE = "ANSWER_LEAKAGE"
    REASONING_MARKER = "REASONING_MARKER"
    META_COMMENTARY_ONLY = "META_COMMENTARY_ONLY"
    OVER_LENGTH = "OVER_LENGTH"


@dataclass(frozen=True)
class GuardVerdict:
    passed: bool
    reason: GuardReason = GuardReason.OK
    repaired_text: Optional[str] = None
    detail: str = ""

    @classmethod
    def ok(cls, repaired_text: Optional[str] = None) -> "GuardVerdict":
        return cls(True, GuardReason.OK, repaired_text)

    @classmethod
    def fail(cls, reason: GuardReason, detail: str = "") -> "GuardVerdict":
        return cls(False, reason, None, detail)

    def to_dict(self) -> Dict[str, object]:
        d: Dict[str, object] = {"passed": self.passed, "reason": self.reason.value}
        if self.repaired_text is not None:
            d["repaired_text"] = self.repaired_text
        if self.detail:
            d["detail"] = self.detail
        return d


# --------------------------- sanitize ---------------------------
_FENCE_OPEN = re.compile(r"^```[\w-]*[ \t]*\n?")
_FENCE_CLOSE = re.compile(r"\n?```$")
_LIST_MARKER = re.compile(r"^(?:[-*•]|\d{1,2}[.)])[ \t]+")
_META_TAIL = re.compile(r"^[^\n:]{0,40}?[:\n]")
_QUOTE_PAIRS = (('"', '"'), ("“", "”"), ("'", "'"), ("‘", "’"), ("«", "»"))


def _strip_meta(text: str, phrases: Sequence[str]) -> str:
    low = text.lower()
    for ph in phrases:
        if not low.startswith(ph):
            continue
        rest = text[len(ph):]
        if ph.endswith("!"):
            return rest
        m = _META_TAIL.match(rest)
        if m:
            return rest[m.end():]
    return text

def _strip_quotes(text: str) -> str:
    if len(text) < 2:
        return text
    for op, cl in _QUOTE_PAIRS:
        if text.startswith(op) and text.endswith(cl):
            inner = text[len(op):-len(cl)]
            if op not in inner and cl not in inner:
                return inner
    return text

def _sanitize_once(text: str, phrases: Sequence[str]) -> str:
    t = text.strip()
    if t.startswith("```"):
        t = _FENCE_CLOSE.sub("", _FENCE_OPEN.sub("", t, count=1), count=1)
    t = _strip_meta(t, phrases).strip()
    t = _strip_quotes(t)
    t = _LIST_MARKER.sub("", t, count=1)
    return t.strip()

def sanitize(candidate: str, lex: Optional[Lexicon] = None, original: str = "") -> str:
    """
    迭代到不动点；每一步只删字符，必然终止，且 sanitize∘sanitize = sanitize
    original 本身以某个元评论短语开头时（"Here is my situation: ..."），该短语属于用户原文，不剥离
    """
    lex = lex or load_lexicon()
    head = nfc(original or "").strip().lower()
    phrases = tuple(p for p in lex.meta_phrases if not head.startswith(p))
    cur = nfc(candidate or "")
    while True:
        nxt = _sanitize_once(cur, phrases)
        if nxt == cur:
            return cur
        cur = nxt


# --------------------------- 共用检查 ---------------------------
def _content_words(text: str, lex: Lexicon) -> List[str]:
    return [w for w in (normalize_token(t) for t in text.split()) if w and not lex.is_stopword(w)]

def _lost_items(original: str, edited: str) -> Tuple[KeyItems, int]:
    items = extract_key_items(original)
    return items, items.M - preserved_count(items, edited)

def _new_items(original: str, edited: str) -> int:
    items = extract_key_items(edited)
    return items.M - preserved_count(items, original)

def leakage_reason(text: str, lex: Lexicon, original: str = "") -> Optional[GuardReason]:
    """命中泄露模式（且原文不含同一模式）时返回原因"""
    for kind, pat in lex.leakage_patterns:
        if pat.search(text) and not (original and pat.search(original)):
            return GuardReason.ANSWER_LEAKAGE if kind == "answer" else GuardReason.REASONING_MARKER
    return None

def _ends_question(text: str) -> bool:
    return text.rstrip().endswith("?")


# --------------------------- 各 agent 守卫 ---------------------------
def cleaner_guard(original: str, edited: str, lex: Optional[Lexicon] = None) -> GuardVerdict:
    lex = lex or load_lexicon()
    original, edited = nfc(original), nfc(edited)
    items, lost = _lost_items(original, edited)
    if lost > 0:
        return GuardVerdict.fail(GuardReason.DROPPED_CONSTRAINT, f"{lost} of {items.M} key items missing")

    orig_words = {w for w in (normalize_token(t) for t in original.split()) if w}
    corrections = {c for w in orig_words for c in (lex.correct(w),) if c}
    corrections |= {part for c in corrections for part in c.split()}
    for w in _content_words(edited, lex):
        if w in orig_words or w in corrections:
            continue
        if any(Levenshtein.distance(w, o, score_cutoff=MAX_EDIT_DISTANCE) <= MAX_EDIT_DISTANCE
               for o in orig_words):
            continue
        return GuardVerdict.fail(GuardReason.NEW_CONTENT, f"new token {w!r}")

    leak = leakage_reason(edited, lex, original)
    if leak:
        return GuardVerdict.fail(leak)
    return GuardVerdict.ok()


def _repair_question(edited: str) -> str:
    return edited.rstrip().rstrip(".!").rstrip() + "?"

def paraphrase_guard(original: str, edited: str, lex: Optional[Lexicon] = None,
                     repair: bool = False) -> GuardVerdict:
    """repair=True 时，若唯一问题是丢失结尾 "?"，补回并放行（repaired_text）"""
    lex = lex or load_lexicon()
    original, edited = nfc(original), nfc(edited)
    items, lost = _lost_items(original, edited)
    if lost > 0:
        return GuardVerdict.fail(GuardReason.DROPPED_CONSTRAINT, f"{lost} of {items.M} key items missing")
    added = _new_items(original, edited)
    if added > 0:
        return GuardVerdict.fail(GuardReason.NEW_CONTENT, f"{added} new key items")
    leak = leakage_reason(edited, lex, original)
    if leak:
        return GuardVerdict.fail(leak)
    if _ends_question(original) and not _ends_question(edited):
        if repair:
            return GuardVerdict.ok(repaired_text=_repair_question(edited))
        return GuardVerdict.fail(GuardReason.LOST_QUESTION_MARK)
    return GuardVerdict.ok()


# --------------------------- Fact-Adder ---------------------------
_BULLET = re.compile(r"^\s*(?:[-*•]|\d{1,2}[.)])\s*")
_OPTION_LETTER = re.compile(r"^\(?[A-E][).:]?$")
_BARE_NUMBER = re.compile(r"^[-+]?\d+(?:[.,]\d+)*%?$")


@dataclass(frozen=True)
class FactScreen:
    kept: Tuple[str, ...]
    dropped: Tuple[Tuple[str, GuardReason], ...] = field(default_factory=tuple)
    tokens: int = 0

    @property
    def first_reason(self) -> GuardReason:
        return self.dropped[0][1] if self.dropped else GuardReason.OK


def parse_bullets(raw: str) -> List[str]:
    """把 Fact-Adder 输出拆成事实行（去掉列表符号与空行）"""
    out = []
    for line in nfc(raw or "").splitlines():
        s = _BULLET.sub("", line).strip()
        if s:
            out.append(s)
    return out

def _leaks_final_token(bullet: str) -> bool:
    if _OPTION_LETTER.match(bullet.strip()):
        return True
    toks = bullet.split()
    if not toks:
        return False
    last = toks[-1].rstrip(".,;:!")
    return bool(_OPTION_LETTER.match(last) or _BARE_NUMBER.match(last))

def screen_facts(original: str, facts: Sequence[str], budget: Optional[TokenBudget] = None,
                 lex: Optional[Lexicon] = None) -> FactScreen:
    budget = budget or TokenBudget()
    lex = lex or load_lexicon()
    anchors = set(_content_words(original, lex))
    kept: List[str] = []
    dropped: List[Tuple[str, GuardReason]] = []
    used = 0
    for raw in facts:
        bullet = _BULLET.sub("", nfc(raw)).strip()
        if not bullet:
            continue
        leak = leakage_reason(bullet, lex)
        if leak:
            dropped.append((bullet, leak))
            continue
        if _leaks_final_token(bullet):
            dropped.append((bullet, GuardReason.ANSWER_LEAKAGE))
            continue
        if not anchors & set(_content_words(bullet, lex)):
            dropped.append((bullet, GuardReason.NEW_CONTENT))
            continue
        n = budget.count(f"- {bullet}")
        if len(kept) >= budget.fact_bullet_cap or used + n > budget.fact_token_cap:
            dropped.append((bullet, GuardReason.OVER_LENGTH))
            continue
        kept.append(bullet)
        used += n
    return FactScreen(kept=tuple(kept), dropped=tuple(dropped), tokens=used)

def fact_guard(original: str, facts: Sequence[str], budget: Optional[TokenBudget] = None,
               lex: Optional[Lexicon] = None) -> Optional[List[str]]:
    """过滤后的事实；全部被丢弃时返回 None（等同 NONE）"""
    screen = screen_facts(original, facts, budget, lex)
    return list(screen.kept) or None


# --------------------------- few-shot ---------------------------
_Q_MARK = re.compile(r"(?:^|(?<=\s))(?:Q|Question)\s*:", re.I)
_A_ANSWERED = re.compile(r"(?:^|(?<=\s))(?:A|Answer)\s*:[ \t]*\S", re.I)


@dataclass(frozen=True)
class FewShotSegmentation:
    prefix: str
    final_query: str
    detected: bool
    separator: str = ""
    exemplars: int = 0

    def reattach(self, query: str) -> str:
        return f"{self.prefix}{self.separator}{query}" if self.detected else query


def detect_fewshot(prompt: str) -> FewShotSegmentation:
    text = prompt or ""
    starts = [m.start() for m in _Q_MARK.finditer(text)]
    if len(starts) < 3:
        return FewShotSegmentation(prefix="", final_query=text, detected=False)
    bounds = starts + [len(text)]
    segments = [text[bounds[i]:bounds[i + 1]] for i in range(len(starts))]
    answered = sum(1 for seg in segments[:-1] if _A_ANSWERED.search(seg))
    if answered < 2:
        return FewShotSegmentation(prefix="", final_query=text, detected=False)
    head = text[:starts[-1]]
    prefix = head.rstrip()
    return FewShotSegmentation(prefix=prefix, separator=head[len(prefix):],
                               final_query=text[starts[-1]:], detected=True, exemplars=answered)


# --------------------------- 可插拔守卫 ---------------------------
class Guard(Protocol):
    def __call__(self, original: str, edited: str) -> GuardVerdict: ...


@dataclass
class RemoteGuard:
    """
    外部守卫端点：POST {"agent","original","edited"} -> {"passed": bool, "reason": str}
    网络 / 协议失败时回落到确定性守卫
    """
    url: str
    agent: str
    fallback: Callable[[str, str], GuardVerdict]
    timeout: float = 10.0

    def __call__(self, original: str, edited: str) -> GuardVerdict:
        try:
            r = requests.post(self.url, json={"agent": self.agent, "original": original, "edited": edited},
                              timeout=self.timeout)
            r.raise_for_status()
            js = r.json()
            passed = bool(js.get("passed", False))
            reason = GuardReason(js.get("reason") or ("OK" if passed else "NEW_CONTENT"))
        except (requests.RequestException, ValueError, AttributeError) as ex:
            warn(f"[guards] remote guard {self.url} unavailable ({ex.__class__.__name__}); using local guard")
            return self.fallback(original, edited)
        debug(f"[guards] remote {self.agent} -> {reason.value}")
        if passed:
            return GuardVerdict.ok()
        return GuardVerdict.fail(reason if reason is not GuardReason.OK else GuardReason.NEW_CONTENT)


def build_guards(guard_endpoints: Dict[str, str] | None = None, *, lex: Optional[Lexicon] = None,
                 repair: bool = False, timeout: float = 10.0) -> Dict[str, Guard]:
    """agent -> guard；未配置端点的 agent 使用确定性实现"""
    lex = lex or load_lexicon()
    guards: Dict[str, Guard] = {
        "cleaner": lambda o, e: cleaner_guard(o, e, lex),
        "paraphraser": lambda o, e: paraphrase_guard(o, e, lex, repair=repair),
    }
    for agent, url in (guard_endpoints or {}).items():
        if agent in guards and url:
            guards[agent] = RemoteGuard(url=url, agent=agent, fallback=guards[agent], timeout=timeout)
    return guards
