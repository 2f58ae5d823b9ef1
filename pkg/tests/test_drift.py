import random
from collections import Counter

import pytest

from poaas.agents import AgentKind
from poaas.config import DriftPolicy
from poaas.drift import (
    DriftReason, char_ngram_jaccard, drift, extract_key_items, preservation_ratio, seq_ratio,
    similarity, weighted_token_overlap, within_drift, word_ngram_jaccard,
)
from poaas.guards import cleaner_guard
from poaas.heuristics import QualityProfile
from poaas.lexicon import normalize_token
from poaas.util import EmptyInput

POLICY = DriftPolicy()
CLEAN = QualityProfile(typo=0.0, comp=1.0, flu=1.0, clar=0.9, q=1.0)


# ----- 独立参照实现 -----
def ref_ratcliff_obershelp(a: str, b: str) -> float:
    def matched(a, b):
        best = (0, 0, 0)
        for i in range(len(a)):
            for j in range(len(b)):
                k = 0
                while i + k < len(a) and j + k < len(b) and a[i + k] == b[j + k]:
                    k += 1
                if k > best[2]:
                    best = (i, j, k)
        i, j, k = best
        if k == 0:
            return 0
        return k + matched(a[:i], b[:j]) + matched(a[i + k:], b[j + k:])
    if not a and not b:
        return 1.0
    return 2.0 * matched(a, b) / (len(a) + len(b))


def ref_char_set(s: str, n: int = 3) -> set:
    s = " ".join(s.lower().split())
    out = set()
    for i in range(len(s)):
        if i + n <= len(s):
            out.add(s[i:i + n])
    return out


def ref_word_set(s: str, n: int = 2) -> set:
    words = [w for w in (normalize_token(t) for t in s.split()) if w]
    return {tuple(words[i:i + n]) for i in range(len(words) - n + 1)}


def ref_jaccard(x: set, y: set) -> float:
    if not x and not y:
        return 1.0
    return len(x & y) / len(x | y)


def random_text(rng: random.Random, max_len: int = 40) -> str:
    alphabet = "abcab cd ABe  x."
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, max_len)))


# ----- 分量 -----
@pytest.mark.parametrize("a,b,expected", [
    ("abc", "abc", 1.0),
    ("abcd", "zzzz", 0.0),
    ("abcd", "abce", 0.75),
    ("", "", 1.0),
    ("  The  Cat ", "the cat", 1.0),
])
def test_seq_ratio(a, b, expected):
    assert seq_ratio(a, b) == pytest.approx(expected)


@pytest.mark.parametrize("a,b,expected", [
    ("abc", "abc", 1.0),
    ("abcd", "bcde", 1 / 3),
    ("ab", "ab", 1.0),
    ("ab", "abc", 0.0),
])
def test_char_ngram_jaccard(a, b, expected):
    assert char_ngram_jaccard(a, b) == pytest.approx(expected)


@pytest.mark.parametrize("a,b,expected", [
    ("the cat sat", "the cat sat", 1.0),
    ("a b c", "b c d", 1 / 3),
    ("a b", "c d", 0.0),
])
def test_word_ngram_jaccard(a, b, expected):
    assert word_ngram_jaccard(a, b) == pytest.approx(expected)


def test_weighted_token_overlap(lex):
    assert weighted_token_overlap("cat dog", "dog cat", lex) == 1.0
    assert weighted_token_overlap("the cat", "the dog", lex) == pytest.approx(0.2 / 2.2)
    assert weighted_token_overlap("cat", "dog", lex) == 0.0
    assert weighted_token_overlap("", "", lex) == 1.0


def test_similarity_identity_and_disjoint(lex):
    rep = similarity("What causes tides?", "What causes tides?", lex)
    assert rep.sim == 1.0 and rep.D == 0.0
    # 单词文本两侧都没有词二元组，该分量按 1.0 计
    rep = similarity("abc", "xyz", lex)
    assert rep.j_word2 == 1.0
    assert rep.sim == pytest.approx(0.12)


# ----- 参照等价（随机串） -----
def test_oracle_equivalence():
    rng = random.Random(7)
    for _ in range(1000):
        a, b = random_text(rng), random_text(rng)
        assert char_ngram_jaccard(a, b) == ref_jaccard(ref_char_set(a), ref_char_set(b))
        assert word_ngram_jaccard(a, b) == ref_jaccard(ref_word_set(a), ref_word_set(b))
        assert char_ngram_jaccard(a, b) == char_ngram_jaccard(b, a)
        na, nb = " ".join(a.lower().split()), " ".join(b.lower().split())
        assert abs(seq_ratio(a, b) - ref_ratcliff_obershelp(na, nb)) <= 1e-12


def test_drift_algebra(lex):
    rng = random.Random(11)
    for _ in range(10_000):
        a = random_text(rng) or "x"
        b = random_text(rng)
        rep = drift(a, b, POLICY, lex)
        s_jac = 0.6 * rep.j_char3 + 0.4 * rep.j_word2
        assert abs(rep.s_jac - s_jac) <= 1e-12
        assert abs(rep.sim - (0.5 * rep.s_seq + 0.3 * s_jac + 0.2 * rep.s_tok)) <= 1e-12
        assert abs(rep.D - (1 - rep.sim)) <= 1e-12
        if rep.P_content >= 0.8:
            assert rep.D_final == rep.D
        else:
            assert rep.D_final == min(1.0, rep.D + 0.2 * (1 - rep.P_content))
        for v in (rep.s_seq, rep.s_jac, rep.s_tok, rep.sim, rep.D_final):
            assert 0.0 <= v <= 1.0
        assert rep.D_final >= rep.D


# ----- 关键项 -----
def test_key_items_examples():
    assert extract_key_items("Compare GPT models").M == 0
    items = extract_key_items('Visit https://X.com and cite "Deep Learning" from 2016')
    assert items.urls_emails == Counter({"https://x.com": 1})
    assert items.quoted == Counter({"Deep Learning": 1})
    assert items.numbers == Counter({"2016": 1})
    assert items.entities == Counter()
    assert items.M == 3
    assert extract_key_items("").M == 0


def test_key_items_entities_and_numbers():
    items = extract_key_items("Fly from New York to San Francisco on 3 May, costing 1,200.50 or mail a@b.org")
    assert items.entities == Counter({"New York": 1, "San Francisco": 1})
    assert items.numbers == Counter({"3": 1, "1200.50": 1})
    assert items.urls_emails == Counter({"a@b.org": 1})
    assert items.M == 5


@pytest.mark.parametrize("x,x2,expected", [
    ("Explain tides", "Explain the tides", 1.0),
    ("Compare 2016 and 2020", "Compare 2016 and 2020 again", 1.0),
    ("Compare 2016 and 2020", "Compare 2016 only", 0.5),
    ("Visit New York", "visit new york", 1.0),
])
def test_preservation_ratio(x, x2, expected):
    assert preservation_ratio(x, x2) == pytest.approx(expected)


def test_removing_a_number_never_raises_preservation():
    x = "Sum 12 and 30 then divide by 7"
    assert preservation_ratio(x, "Sum 12 and then divide by 7") <= preservation_ratio(x, x)


# ----- drift / within_drift -----
def test_drift_identity_fuzz(lex):
    rng = random.Random(3)
    for _ in range(1000):
        x = random_text(rng, 60).strip() or "hello"
        assert drift(x, x, POLICY, lex).D_final == 0.0


KEY_ITEM_PIECES = (
    "see", "1http://x.co", "https://docs.example.org/a?b=1.", "www.example.com,", "mail a.b@c.io",
    '"quoted 3 words"', '"go http://q.io now"', "“smart 2.5”", "3,000", "12", "v2", "(42)",
    "New York", "San Francisco.", "Ada Lovelace", "(Paris)", "the", "and", "now", "A", "x.",
)


def test_key_item_identity_fuzz(lex):
    rng = random.Random(17)
    for _ in range(500):
        x = " ".join(rng.choice(KEY_ITEM_PIECES) for _ in range(rng.randint(1, 12)))
        assert preservation_ratio(x, x) == 1.0, x
        rep = drift(x, x, POLICY, lex)
        assert rep.P_content == 1.0 and rep.D_final == 0.0, x
        assert cleaner_guard(x, x, lex).passed, x


def test_url_glued_to_number_is_preserved(lex):
    x = "see 1http://x.co now"
    items = extract_key_items(x)
    assert items.urls_emails == Counter({"http://x.co": 1})
    assert items.numbers == Counter({"1": 1})
    assert drift(x, x, POLICY, lex).D_final == 0.0
    assert cleaner_guard(x, x, lex).passed
    assert preservation_ratio(x, "see now") == 0.0


def test_drift_penalty_branches(lex):
    x = "Compare 2016 and 2020 sales in Paris"
    rep = drift(x, "Compare sales in Paris", POLICY, lex)
    assert rep.P_content == 0.0
    assert rep.D_final == pytest.approx(min(1.0, rep.D + 0.2))
    rep = drift(x, x + " please", POLICY, lex)
    assert rep.P_content == 1.0 and rep.D_final == rep.D
    assert rep.rho == pytest.approx(len(x + " please") / len(x))


def test_drift_requires_original(lex):
    with pytest.raises(EmptyInput):
        drift("", "x", POLICY, lex)
    with pytest.raises(EmptyInput):
        within_drift("  ", "x", AgentKind.CLEANER, CLEAN, POLICY, lex)


def test_within_drift_accepts_small_paraphrase(lex):
    x = "Describe how the immune system responds to a common cold virus in adults"
    v = within_drift(x, x + ".", AgentKind.PARAPHRASER, CLEAN, POLICY, lex)
    assert v.accepted and v.reason is DriftReason.OK
    assert v.cap == 0.08


def test_within_drift_global_cap_first(lex):
    v = within_drift("Describe the water cycle", "Bake a chocolate cake", AgentKind.PARAPHRASER, CLEAN, POLICY, lex)
    assert not v.accepted and v.reason is DriftReason.GLOBAL_CAP


def test_within_drift_global_cap_binds_noisy_input(lex):
    x = "The quick brown fox jumps over the lazy dog near the river bank"
    x2 = "The quick brown fox leaps across the lazy dog near the river bank"
    noisy = QualityProfile(typo=0.40, comp=1.0, flu=1.0, clar=1.0, q=0.6)
    rep = drift(x, x2, POLICY, lex)
    assert 0.18 < rep.D_final <= POLICY.cleaner_cap(noisy.typo)
    v = within_drift(x, x2, AgentKind.CLEANER, noisy, POLICY, lex)
    assert not v.accepted and v.reason is DriftReason.GLOBAL_CAP
    assert v.cap == pytest.approx(0.35)


def test_within_drift_agent_cap(lex):
    x = "Describe how the immune system responds to a common cold virus in adults"
    x2 = "Describe how the immune system reacts to a common cold virus in adults"
    rep = drift(x, x2, POLICY, lex)
    assert 0.08 < rep.D_final <= 0.18
    v = within_drift(x, x2, AgentKind.PARAPHRASER, CLEAN, POLICY, lex)
    assert v.reason is DriftReason.DRIFT_EXCEEDED
    low_clarity = QualityProfile(typo=0.0, comp=1.0, flu=1.0, clar=0.6, q=0.9)
    relaxed = within_drift(x, x2, AgentKind.PARAPHRASER, low_clarity, POLICY, lex)
    assert relaxed.cap == 0.13
    assert relaxed.accepted == (rep.D_final <= 0.13)


def test_within_drift_length_ratio_for_facts(lex):
    x = "Explain tides"
    long_block = "- " + " ".join(["tides"] * 20) + "\n\n" + x
    v = within_drift(x, long_block, AgentKind.FACT_ADDER, CLEAN, POLICY, lex)
    assert v.reason is DriftReason.LENGTH_RATIO and v.cap is None
    short = within_drift(x, "- Tides rise.\n\n" + x, AgentKind.FACT_ADDER, CLEAN, POLICY, lex)
    assert short.accepted


def test_within_drift_never_accepts_long_candidates(lex):
    rng = random.Random(5)
    loose = DriftPolicy(delta_max=1.0, delta_para=1.0, delta_para_relaxed=1.0, delta_clean_max=1.0,
                        delta_clean_base=1.0)
    for _ in range(300):
        x = random_text(rng).strip() or "a"
        x2 = x * rng.randint(1, 4)
        for agent in AgentKind:
            v = within_drift(x, x2, agent, CLEAN, loose, lex)
            if v.report.rho > loose.rho_max:
                assert not v.accepted
