import pytest
import requests

from poaas.config import TokenBudget
from poaas.guards import (
    GuardReason, RemoteGuard, build_guards, cleaner_guard, detect_fewshot, fact_guard,
    paraphrase_guard, parse_bullets, sanitize, screen_facts,
)

PROMPTS = [
    "What causes tides?",
    "wht is teh capital",
    'Visit https://example.com and cite "Deep Learning" from 2016',
    "Fly from New York to San Francisco on 3 May",
    "Explain the first law, then the second one",
    "Summarize the 2016 report in 120 words",
]


# ----- sanitize -----
@pytest.mark.parametrize("raw,expected", [
    ("Here is the rewrite: What causes tides?", "What causes tides?"),
    ('"What causes tides?"', "What causes tides?"),
    ("```\nWhat causes tides?\n```", "What causes tides?"),
    ("- What causes tides?", "What causes tides?"),
    ("Sure! What causes tides?", "What causes tides?"),
    ("  What causes tides?  ", "What causes tides?"),
    ("What causes tides?", "What causes tides?"),
])
def test_sanitize(lex, raw, expected):
    assert sanitize(raw, lex) == expected


@pytest.mark.parametrize("raw", [
    'Here is the rewrite: "- What causes tides?"',
    "```text\nSure! Explain tides\n```",
    "'\"nested\"'",
    "",
])
def test_sanitize_idempotent(lex, raw):
    once = sanitize(raw, lex)
    assert sanitize(once, lex) == once
    assert len(once) <= len(raw)


def test_sanitize_keeps_opening_written_by_user(lex):
    original = "Here is my situation: I wnat to undrestand teh difference between a loan and a lease."
    fixed = "Here is my situation: I want to understand the difference between a loan and a lease."
    assert sanitize(fixed, lex, original=original) == fixed
    assert sanitize("Here is the rewrite: " + fixed, lex, original=original) == fixed
    assert sanitize(fixed, lex) == "I want to understand the difference between a loan and a lease."


# ----- cleaner_guard -----
def test_cleaner_guard_accepts_corrections(lex):
    assert cleaner_guard("wht is teh capital", "what is the capital", lex).passed


def test_cleaner_guard_rejects_new_content(lex):
    v = cleaner_guard("what is the capital", "what is the capital of France in 1800", lex)
    assert not v.passed and v.reason is GuardReason.NEW_CONTENT


def test_cleaner_guard_rejects_dropped_constraint(lex):
    v = cleaner_guard("Summarize the 2016 report", "Summarize the report", lex)
    assert v.reason is GuardReason.DROPPED_CONSTRAINT


def test_cleaner_guard_allows_small_edits(lex):
    assert cleaner_guard("explian photosynthsis", "explain photosynthesis", lex).passed


@pytest.mark.parametrize("x", PROMPTS)
def test_guards_accept_identity(lex, x):
    assert cleaner_guard(x, x, lex).passed
    assert paraphrase_guard(x, x, lex).passed


# ----- paraphrase_guard -----
def test_paraphrase_guard_question_mark(lex):
    v = paraphrase_guard("What causes tides?", "Tides are caused by something.", lex)
    assert v.reason is GuardReason.LOST_QUESTION_MARK
    fixed = paraphrase_guard("What causes tides?", "Tides are caused by something.", lex, repair=True)
    assert fixed.passed
    assert fixed.repaired_text == "Tides are caused by something?"


def test_paraphrase_guard_new_url(lex):
    v = paraphrase_guard("How do I install Rust?", "How do I install Rust from https://rustup.rs?", lex)
    assert v.reason is GuardReason.NEW_CONTENT


def test_paraphrase_guard_dropped_number(lex):
    v = paraphrase_guard("Compare 2016 and 2020 revenue", "Compare revenue", lex)
    assert v.reason is GuardReason.DROPPED_CONSTRAINT


def test_paraphrase_guard_answer_leakage(lex):
    v = paraphrase_guard("Explain photosynthesis", "Explain photosynthesis. The answer is sunlight.", lex)
    assert v.reason is GuardReason.ANSWER_LEAKAGE
    assert v.to_dict()["reason"] == "ANSWER_LEAKAGE"


# ----- facts -----
def test_parse_bullets():
    assert parse_bullets("- a\n\n* b\n1. c\n") == ["a", "b", "c"]
    assert parse_bullets("") == []


def test_fact_guard_keeps_grounded_fact(lex):
    assert fact_guard("tell me about Paris", ["Paris is the capital of France."], lex=lex) == [
        "Paris is the capital of France."]


@pytest.mark.parametrize("bullet,reason", [
    ("Step 1: multiply both sides", GuardReason.REASONING_MARKER),
    ("The answer is Paris", GuardReason.ANSWER_LEAKAGE),
    ("Paris was founded around 250", GuardReason.ANSWER_LEAKAGE),
    ("B", GuardReason.ANSWER_LEAKAGE),
    ("Mars is the fourth planet from the Sun.", GuardReason.NEW_CONTENT),
])
def test_screen_facts_drops(lex, bullet, reason):
    screen = screen_facts("tell me about Paris", [bullet], lex=lex)
    assert screen.kept == ()
    assert screen.first_reason is reason
    assert fact_guard("tell me about Paris", [bullet], lex=lex) is None


def test_screen_facts_bullet_cap(lex):
    facts = [
        "Paris is the capital of France.",
        "Berlin is the capital of Germany.",
        "Tokyo is the capital of Japan.",
        "Rome is the capital of Italy.",
    ]
    screen = screen_facts("Compare Paris, Berlin, Tokyo and Rome", facts, lex=lex)
    assert screen.kept == tuple(facts[:3])
    assert screen.dropped == ((facts[3], GuardReason.OVER_LENGTH),)


def test_screen_facts_token_cap(lex):
    budget = TokenBudget(fact_token_cap=10)
    facts = ["Paris is the capital of France.", "Paris has many museums and old bridges."]
    screen = screen_facts("tell me about Paris", facts, budget, lex)
    assert screen.kept == (facts[0],)
    assert screen.tokens == 7
    assert screen.first_reason is GuardReason.OVER_LENGTH


# ----- few-shot -----
def test_detect_fewshot():
    seg = detect_fewshot("Q: a A: 1\n\nQ: b A: 2\n\nQ: c A:")
    assert seg.detected and seg.exemplars == 2
    assert seg.prefix == "Q: a A: 1\n\nQ: b A: 2"
    assert seg.separator == "\n\n"
    assert seg.final_query == "Q: c A:"
    assert seg.reattach("Q: see? A:") == "Q: a A: 1\n\nQ: b A: 2\n\nQ: see? A:"


@pytest.mark.parametrize("prompt", [
    "Q: a A: 1\n\nQ: b",
    "Q: a A: 1 Q: b A: Q: c",
    "What causes tides?",
])
def test_detect_fewshot_negative(prompt):
    seg = detect_fewshot(prompt)
    assert not seg.detected
    assert seg.final_query == prompt
    assert seg.reattach("x") == "x"


# ----- 可插拔守卫 -----
class _FakeResponse:
    def __init__(self, payload, status=200):
        self.payload, self.status = payload, status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"{self.status}")

    def json(self):
        return self.payload


def test_remote_guard_verdict(monkeypatch, lex):
    calls = []

    def fake_post(url, json, timeout):
        calls.append((url, json))
        return _FakeResponse({"passed": False, "reason": "DROPPED_CONSTRAINT"})

    monkeypatch.setattr(requests, "post", fake_post)
    guards = build_guards({"cleaner": "http://guard.local/check"}, lex=lex)
    assert isinstance(guards["cleaner"], RemoteGuard)
    v = guards["cleaner"]("wht is teh capital", "what is the capital")
    assert v.reason is GuardReason.DROPPED_CONSTRAINT
    assert calls[0][1] == {"agent": "cleaner", "original": "wht is teh capital", "edited": "what is the capital"}


def test_remote_guard_falls_back(monkeypatch, lex):
    def down(*a, **kw):
        raise requests.ConnectionError("refused")

    monkeypatch.setattr(requests, "post", down)
    guard = RemoteGuard(url="http://guard.local", agent="cleaner",
                        fallback=lambda o, e: cleaner_guard(o, e, lex))
    assert guard("wht is teh capital", "what is the capital").passed
    assert guard("Summarize the 2016 report", "Summarize the report").reason is GuardReason.DROPPED_CONSTRAINT


def test_build_guards_repair_flag(lex):
    plain = build_guards(lex=lex)["paraphraser"]("What causes tides?", "Tides are caused by something.")
    repaired = build_guards(lex=lex, repair=True)["paraphraser"]("What causes tides?", "Tides are caused by something.")
    assert not plain.passed
    assert repaired.passed and repaired.repaired_text.endswith("?")
