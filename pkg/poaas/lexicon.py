# poaas/lexicon.py
# ======================================================================
#  数据文件加载（停用词 / 噪声词典 / 线索词 / 元评论 / 泄露模式 / 事实表 / mixup 词表）
#  - YAML 与换行分隔文本（UTF-8，# 开头为注释）
#  - 噪声变体表 = 显式拼写错误 ∪ 元音脱落变体 ∪ QWERTY 邻键替换，去掉已知真实词及其一步近邻
#  - 每个文件的 sha256 进入 config_hash
#  - 同一 data_dir 只加载一次（lru_cache）；返回不可变对象，可跨线程共享
# ======================================================================

from __future__ import annotations
import os, re
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from pathlib import Path
from typing import Dict, FrozenSet, Mapping, Sequence, Tuple

import yaml
from rapidfuzz import process
from rapidfuzz.distance import OSA

from poaas.logging_utils import debug, kv_debug
from poaas.util import ConfigError, sha256_hex

DEFAULT_DATA_DIR = Path(__file__).resolve().parent / "data"
LEAKAGE_KINDS = ("answer", "reasoning")

_EDGE_PUNCT = re.compile(r"^[^\w]+|[^\w]+$", re.UNICODE)
_REPEAT3 = re.compile(r"([a-z])\1\1")
_ALPHA = re.compile(r"^[a-z]+$")
_VOWELS = set("aeiou")

# QWERTY 三行；相邻 = 同行左右 + 上一行 (c, c+1) + 下一行 (c-1, c)
_ROWS = ("qwertyuiop", "asdfghjkl", "zxcvbnm")


def _qwerty_neighbors() -> Dict[str, str]:
    out: Dict[str, str] = {}
    for r, row in enumerate(_ROWS):
        for c, ch in enumerate(row):
            near = []
            for rr, cc in ((r, c - 1), (r, c + 1), (r - 1, c), (r - 1, c + 1), (r + 1, c - 1), (r + 1, c)):
                if 0 <= rr < len(_ROWS) and 0 <= cc < len(_ROWS[rr]):
                    near.append(_ROWS[rr][cc])
            out[ch] = "".join(near)
    return out

QWERTY = _qwerty_neighbors()


def normalize_token(tok: str) -> str:
    """小写并剥离两侧标点：'Tides?' -> 'tides'"""
    return _EDGE_PUNCT.sub("", tok.lower())


# --------------------------- 文件读取 ---------------------------
def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"data file missing: {path}") from None

def _lines(raw: bytes) -> Tuple[str, ...]:
    out = []
    for line in raw.decode("utf-8").splitlines():
        s = line.strip()
        if s and not s.startswith("#"):
            out.append(s)
    return tuple(out)

def _yaml(raw: bytes, path: Path) -> dict:
    try:
        data = yaml.safe_load(raw.decode("utf-8")) or {}
    except yaml.YAMLError as ex:
        raise ConfigError(f"cannot parse {path.name}: {ex}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path.name}: top level must be a mapping")
    return data


# --------------------------- 噪声变体 ---------------------------
def _vowel_dropped(word: str) -> set[str]:
    """删去内部元音（首尾字符保留）的所有非空组合"""
    idx = [i for i in range(1, len(word) - 1) if word[i] in _VOWELS]
    out = set()
    for k in range(1, len(idx) + 1):
        for drop in combinations(idx, k):
            out.add("".join(ch for i, ch in enumerate(word) if i not in drop))
    return out

def _adjacent_subs(word: str) -> set[str]:
    out = set()
    for i, ch in enumerate(word):
        for nb in QWERTY.get(ch, ""):
            out.add(word[:i] + nb + word[i + 1:])
    return out

def _collides(variant: str, target: str, known: Sequence[str]) -> bool:
    """变体离另一个真实词也只差一步（'wnat' 之于 'want'）时，纠错方向不确定"""
    hits = process.extract(variant, known, scorer=OSA.distance, score_cutoff=1, limit=None)
    return any(word != target for word, _, _ in hits)

def derive_noise_map(misspellings: Mapping[str, str], known: FrozenSet[str]) -> Dict[str, str]:
    """显式词典优先；派生变体只针对长度 >= 4 的单词目标，且丢弃与其他已知词 OSA 距离 ≤ 1 的变体"""
    noise: Dict[str, str] = {}
    vocab = sorted(known)
    for target in sorted(set(misspellings.values())):
        if len(target) < 4 or not _ALPHA.match(target):
            continue
        for variant in sorted(_vowel_dropped(target) | _adjacent_subs(target)):
            if len(variant) < 3 or variant == target or variant in known:
                continue
            if variant in noise or _collides(variant, target, vocab):
                continue
            noise[variant] = target
    noise.update(misspellings)
    return noise


# --------------------------- Lexicon ---------------------------
@dataclass(frozen=True)
class Lexicon:
    data_dir: Path
    stopwords: FrozenSet[str]
    misspellings: Mapping[str, str]
    noise_map: Mapping[str, str]
    known_words: FrozenSet[str]
    detail_cues: FrozenSet[str]
    constraint_cues: FrozenSet[str]
    meta_phrases: Tuple[str, ...]
    leakage_patterns: Tuple[Tuple[str, re.Pattern], ...]
    facts: Mapping[str, str]
    mixup_vocab: Tuple[str, ...]
    digests: Mapping[str, str] = field(default_factory=dict)

    def is_noise(self, norm: str) -> bool:
        """norm 为 normalize_token 的结果"""
        if not norm or not norm.isalpha():
            return False
        return norm in self.noise_map or bool(_REPEAT3.search(norm))

    def correct(self, norm: str) -> str | None:
        return self.noise_map.get(norm)

    def is_stopword(self, norm: str) -> bool:
        return norm in self.stopwords

    @property
    def digest(self) -> str:
        """所有数据文件摘要的组合摘要"""
        return sha256_hex("".join(f"{k}={v}\n" for k, v in sorted(self.digests.items())))


@lru_cache(maxsize=8)
def _load(data_dir: str) -> Lexicon:
    base = Path(data_dir)
    digests: Dict[str, str] = {}

    def raw(name: str) -> bytes:
        b = _read_bytes(base / name)
        digests[name] = sha256_hex(b)
        return b

    stopwords = frozenset(w.lower() for w in _lines(raw("stopwords.txt")))
    noise_doc = _yaml(raw("noise_lexicon.yml"), base / "noise_lexicon.yml")
    misspellings = {str(k).lower(): str(v).lower() for k, v in (noise_doc.get("misspellings") or {}).items()}
    common = frozenset(w.lower() for w in _lines(raw("common_words.txt")))
    detail = frozenset(w.lower() for w in _lines(raw("detail_cues.txt")))
    constraint = frozenset(w.lower() for w in _lines(raw("constraint_cues.txt")))
    meta = tuple(sorted((p.lower() for p in _lines(raw("meta_phrases.txt"))), key=len, reverse=True))

    patterns = []
    for line in _lines(raw("leakage_patterns.txt")):
        kind, sep, p = line.partition(":")
        kind = kind.strip().lower()
        if not sep or kind not in LEAKAGE_KINDS:
            raise ConfigError(f"leakage_patterns.txt: expected 'answer: <regex>' or 'reasoning: <regex>', got {line!r}")
        try:
            patterns.append((kind, re.compile(p.strip(), re.I)))
        except re.error as ex:
            raise ConfigError(f"leakage_patterns.txt: bad regex {p!r}: {ex}") from None

    fact_doc = _yaml(raw("fact_table.yml"), base / "fact_table.yml")
    facts = {str(k): str(v).strip() for k, v in (fact_doc.get("facts") or {}).items()}
    vocab = tuple(w.lower() for w in _lines(raw("mixup_vocab.txt")))

    for tpl in sorted((base / "templates").glob("*.j2")):
        raw(f"templates/{tpl.name}")

    targets = {t for t in misspellings.values() if _ALPHA.match(t)}
    fact_words = {normalize_token(w) for k in facts for w in k.split()}
    known = frozenset(stopwords | common | detail | constraint | set(vocab) | targets | fact_words)
    noise_map = derive_noise_map(misspellings, known)

    lex = Lexicon(
        data_dir=base,
        stopwords=stopwords,
        misspellings=misspellings,
        noise_map=noise_map,
        known_words=known,
        detail_cues=detail,
        constraint_cues=constraint,
        meta_phrases=meta,
        leakage_patterns=tuple(patterns),
        facts=facts,
        mixup_vocab=vocab,
        digests=digests,
    )
    kv_debug("[lexicon] loaded", dir=str(base), misspellings=len(misspellings),
             noise_variants=len(noise_map), facts=len(facts), vocab=len(vocab))
    return lex


def load_lexicon(data_dir: str | os.PathLike | None = None) -> Lexicon:
    """参数 > POAAS_DATA_DIR 环境变量 > 包内 data/"""
    d = data_dir or os.getenv("POAAS_DATA_DIR") or DEFAULT_DATA_DIR
    path = Path(d).resolve()
    if not path.is_dir():
        raise ConfigError(f"data directory not found: {path}")
    debug(f"[lexicon] data_dir={path}")
    return _load(str(path))
