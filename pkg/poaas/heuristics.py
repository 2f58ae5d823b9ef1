# poaas/heuristics.py
# ======================================================================
#  提示质量启发式（纯 CPU，确定性）
#  - typo / completeness / fluency / clarity 四项分数，均裁剪到 [0,1]
#  - typo 另含删词残句信号（如悬空冠词、句尾截断），命中即加 0.32
#  - q(x) = 1 − max(typo, [τ_comp−comp]₊, [τ_flu−flu]₊, [0.70−clar]₊)
#  - 跳过门：q > 1−τ_skip 且 typo < 0.20（宁可漏改，不可误改）
#  - 文本先做 NFC；空白切词；阈值比较一律严格不等号
# ======================================================================

from __future__ import annotations
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

from poaas.config import RoutingThresholds
from poaas.lexicon import Lexicon, load_lexicon, normalize_token
from poaas.util import EmptyInput, require_text

WH_WORDS = frozenset({"what", "why", "how", "when", "where", "who"})
LEADING_PRONOUNS = frozenset({"it", "this", "that", "they", "them"})
# 模糊模板："what is X" / "tell me about X" 一类
VAGUE_OPENERS: Tuple[Tuple[str, ...], ...] = (
    ("what", "is"), ("what", "are"), ("what's",), ("whats",),
    ("who", "is"), ("who", "was"), ("tell", "me", "about"),
)
_SENTENCE_END = re.compile(r"[.!?]")
_DIGIT = re.compile(r"\d")


def _clip(v: float) -> float:
    """四舍五入到 1e-10 消除浮点尾差，再裁剪到 [0,1]"""
    return min(1.0, max(0.0, round(v, 10)))


# --------------------------- 类型 ---------------------------
@dataclass(frozen=True)
class TokenizedPrompt:
    raw: str
    tokens: Tuple[str, ...]
    normalized_tokens: Tuple[str, ...]
    char_count: int
    is_question_start: bool

    @property
    def words(self) -> Tuple[str, ...]:
        """去掉纯标点 token 后的规范化词"""
        return tuple(t for t in self.normalized_tokens if t)


@dataclass(frozen=True)
class QualityProfile:
    typo: float
    comp: float
    flu: float
    clar: float
    q: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def tokenize(text: str, lex: Optional[Lexicon] = None) -> TokenizedPrompt:
    raw = require_text(text)
    lex = lex or load_lexicon()
    tokens = tuple(raw.split())
    norms = tuple(normalize_token(t) for t in tokens)
    first = next((n for n in norms if n), "")
    wh = first in WH_WORDS or (lex.correct(first) or "") in WH_WORDS
    return TokenizedPrompt(raw=raw, tokens=tokens, normalized_tokens=norms,
                           char_count=len(raw), is_question_start=wh)


def _require(p: TokenizedPrompt) -> None:
    if not p.tokens or not p.raw.strip():
        raise EmptyInput("prompt is empty")


# --------------------------- 删词残句信号 ---------------------------
# 删词后常见的断句痕迹
DETERMINERS = frozenset({"the", "a", "an", "my", "your", "its", "their", "our"})
PREPOSITIONS = frozenset({
    "of", "to", "in", "for", "with", "from", "into", "on", "at", "by", "between", "through",
    "across", "during", "without", "than", "after", "before", "under", "among", "within", "against",
})
CONJUNCTIONS = frozenset({"and", "or", "but"})
AUXILIARIES = frozenset({
    "is", "are", "was", "were", "be", "been", "do", "does", "did",
    "can", "could", "should", "would", "will", "has", "have", "had",
})
_WH_ANY = WH_WORDS | {"which"}
_AFTER_DETERMINER = DETERMINERS | PREPOSITIONS | CONJUNCTIONS | AUXILIARIES | _WH_ANY
_END_PREPOSITIONS = frozenset({"in", "into", "between", "through", "during", "without", "than", "across"})
_IMPERATIVES = frozenset({"explain", "describe", "give", "list", "compare", "summarize",
                          "include", "use", "write", "present"})
_OPENERS = _WH_ANY | _IMPERATIVES | {"please", "keep", "focus", "ask"}
_NUMERALS = frozenset({"one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"})
# "the same X the ..." / "the first time the ..." 这类合法的 冠词-词-冠词
_LINK_OK = frozenset({"way", "time", "moment", "day", "year", "more", "less", "first", "last", "same"})
_ABBREVIATIONS = frozenset({"etc", "vs", "approx", "mr", "mrs", "ms", "dr", "st", "no"})
FRAGMENT_PENALTY = 0.32

_TRAILING_PUNCT = re.compile(r"[^\w:]$")
_NON_WORD_END = re.compile(r"\W$")
_WORD_END = re.compile(r"\w$")
_ENDS_SENTENCE = re.compile(r"[.!?]$")
_ALPHA_WORD = re.compile(r"^[A-Za-z]+$")
_SENTENCE_WORD = re.compile(r"^[A-Za-z]+[.!?]$")
_CAPITALIZED = re.compile(r"^[A-Z][a-z]")
_TEXT_END = re.compile(r"[.!?:]\s*$")


def _token_fragment(p: TokenizedPrompt, i: int, lex: Lexicon) -> Optional[str]:
    toks, norms = p.tokens, p.normalized_tokens
    n = len(toks)
    w = norms[i]
    punct = bool(_TRAILING_PUNCT.search(toks[i]))
    nx = norms[i + 1] if i + 1 < n else None
    after = norms[i + 2] if i + 2 < n else None

    # "A:" 是问答标签，不算冠词
    if w in DETERMINERS and not toks[i].endswith(":"):
        if punct or nx is None or nx in _AFTER_DETERMINER:
            return f"dangling determiner '{w}'"
    if w in PREPOSITIONS and nx is not None and not punct:
        if nx in PREPOSITIONS or nx in CONJUNCTIONS or (nx in AUXILIARIES and w != "to"):
            return f"preposition '{w} {nx}'"
    if w in CONJUNCTIONS and (punct or nx is None or nx in CONJUNCTIONS):
        return f"dangling conjunction '{w}'"
    at_start = i == 0 or bool(_ENDS_SENTENCE.search(toks[i - 1]))
    if w in _IMPERATIVES and at_start and not punct and nx == "of":
        return f"imperative '{w} of'"
    if w in _NUMERALS and not punct and nx in DETERMINERS:
        return f"numeral '{w} {nx}'"
    if (w in PREPOSITIONS and w != "to" and after in DETERMINERS and not punct
            and _ALPHA_WORD.match(toks[i + 1]) and not nx.endswith("ing") and not lex.is_stopword(nx)):
        return f"preposition '{w} {nx} {after}'"
    if (w in DETERMINERS and after in DETERMINERS and not punct
            and not _NON_WORD_END.search(toks[i + 1]) and nx not in _LINK_OK and not lex.is_stopword(nx)):
        return f"determiner '{w} {nx} {after}'"
    if i > 0:
        prev, tok = toks[i - 1], toks[i]
        stop = bool(_SENTENCE_WORD.match(prev)) and prev[:-1].lower() not in _ABBREVIATIONS
        if stop and tok[:1].islower() and tok[:1].isascii():
            return f"lowercase after '{prev}'"
        if _WORD_END.search(prev) and _CAPITALIZED.match(tok) and w in _OPENERS:
            return f"lost sentence break before '{tok}'"
    return None

def fragment_signal(p: TokenizedPrompt, lex: Optional[Lexicon] = None) -> Optional[str]:
    """删词留下的残句痕迹；返回第一条命中的描述，没有则 None"""
    _require(p)
    lex = lex or load_lexicon()
    toks, norms = p.tokens, p.normalized_tokens
    for i, w in enumerate(norms):
        if w:
            hit = _token_fragment(p, i, lex)
            if hit:
                return hit
    ends = bool(_TEXT_END.search(p.raw))
    if not ends and norms[-1] in _END_PREPOSITIONS:
        return f"stranded preposition '{norms[-1]}'"
    if toks[0][:1].islower() and toks[0][:1].isascii() and ends and len(toks) >= 8:
        return "lowercase start"
    if not ends and any(_ENDS_SENTENCE.search(t) for t in toks[:-1]):
        return "truncated tail"
    return None


# --------------------------- typo ---------------------------
def noise_matches(p: TokenizedPrompt, lex: Lexicon) -> int:
    """噪声词典 / 重复字母命中的 token 数（每个 token 最多计 1 次）"""
    return sum(1 for n in p.normalized_tokens if lex.is_noise(n))

def _case_anomaly(p: TokenizedPrompt) -> bool:
    if p.char_count <= 20:
        return False
    upper = sum(1 for c in p.raw if c.isupper())
    lower = sum(1 for c in p.raw if c.islower())
    cased = upper + lower
    if cased == 0:
        return False
    return upper / cased >= 0.9 or upper == 0

def _short_word_ratio(p: TokenizedPrompt, lex: Lexicon) -> float:
    content = [n for n in p.words if not lex.is_stopword(n)]
    if not content:
        return 0.0
    short = [n for n in content if len(n) <= 2 and n.isalpha()]
    return len(short) / len(content)

def typo_score(p: TokenizedPrompt, lex: Optional[Lexicon] = None) -> float:
    _require(p)
    lex = lex or load_lexicon()
    s = 0.04 * min(noise_matches(p, lex), 8)
    if p.is_question_start and not p.raw.rstrip().endswith("?"):
        s += 0.05
    if _case_anomaly(p):
        s += 0.05
    if _short_word_ratio(p, lex) > 0.35:
        s += 0.08
    if fragment_signal(p, lex):
        s += FRAGMENT_PENALTY
    return _clip(s)


# --------------------------- completeness ---------------------------
def _with_corrections(p: TokenizedPrompt, lex: Lexicon) -> Tuple[str, ...]:
    return tuple(lex.correct(n) or n for n in p.words)

def _has_cue(words: Tuple[str, ...], cues) -> bool:
    return any(w in cues or (w.endswith("s") and w[:-1] in cues) for w in words)

def is_vague(words: Tuple[str, ...]) -> bool:
    for opener in VAGUE_OPENERS:
        if len(words) > len(opener) and words[:len(opener)] == opener:
            return True
    return False

def completeness_score(p: TokenizedPrompt, lex: Optional[Lexicon] = None) -> float:
    _require(p)
    lex = lex or load_lexicon()
    n = len(p.tokens)
    words = _with_corrections(p, lex)
    s = 1.0
    if n < 5:
        s -= 0.25
    elif n < 10:
        s -= 0.15
    if n < 15 and not _has_cue(words, lex.detail_cues):
        s -= 0.10
    if is_vague(words):
        constrained = _has_cue(words, lex.constraint_cues) or bool(_DIGIT.search(p.raw))
        if not constrained:
            s -= 0.10
    return _clip(s)


# --------------------------- fluency ---------------------------
def _bigrams(words: Tuple[str, ...]) -> Counter:
    return Counter(zip(words, words[1:]))

def fluency_score(p: TokenizedPrompt, lex: Optional[Lexicon] = None) -> float:
    _require(p)
    n = len(p.tokens)
    s = 1.0
    if n < 3:
        s -= 0.25
    if any(c >= 2 for c in _bigrams(p.words).values()):
        s -= 0.15
    first = p.tokens[0]
    if n >= 12 and first[:1].islower() and _SENTENCE_END.search(p.raw):
        s -= 0.10
    return _clip(s)


# --------------------------- clarity ---------------------------
def clarity_score(p: TokenizedPrompt, lex: Optional[Lexicon] = None) -> float:
    _require(p)
    n = len(p.tokens)
    s = 1.0
    words = p.words
    if len(words) >= 12 and len(set(words)) / len(words) < 0.35:
        s -= 0.15
    first = next((w for w in p.normalized_tokens if w), "")
    if first in LEADING_PRONOUNS:
        s -= 0.10
    if n > 200:
        s -= 0.08
    return _clip(s)


# --------------------------- 汇总 / 跳过门 ---------------------------
def quality(typo: float, comp: float, flu: float, clar: float, t: RoutingThresholds) -> float:
    worst = max(
        typo,
        max(0.0, t.tau_comp - comp),
        max(0.0, t.tau_flu - flu),
        max(0.0, t.tau_clar_fixed - clar),
    )
    return _clip(1.0 - worst)

def analyze(p: TokenizedPrompt, t: Optional[RoutingThresholds] = None,
            lex: Optional[Lexicon] = None) -> QualityProfile:
    t = t or RoutingThresholds()
    lex = lex or load_lexicon()
    typo = typo_score(p, lex)
    comp = completeness_score(p, lex)
    flu = fluency_score(p, lex)
    clar = clarity_score(p, lex)
    return QualityProfile(typo=typo, comp=comp, flu=flu, clar=clar,
                          q=quality(typo, comp, flu, clar, t))

def analyze_text(text: str, t: Optional[RoutingThresholds] = None,
                 lex: Optional[Lexicon] = None) -> QualityProfile:
    lex = lex or load_lexicon()
    return analyze(tokenize(text, lex), t, lex)

def should_skip(profile: QualityProfile, t: Optional[RoutingThresholds] = None) -> bool:
    t = t or RoutingThresholds()
    return profile.q > 1.0 - t.tau_skip and profile.typo < t.typo_skip_max
