"""Text helpers shared by the mock model, entity resolution and evaluation."""

from __future__ import annotations

import re
import string
import unicodedata

ARTICLES = frozenset({"a", "an", "the"})

STOPWORDS = frozenset(
    """
    a an and are as at be been but by can could did do does for from had has have
    he her hers him his how i if in into is it its me my of on or our she so than
    that the their them then there these they this those to us was we were what
    when where which who whom whose why will with would you your yours also just
    very really both all any some about after before over under again more most
    """.split()
)

# Capitalized words that open sentences or questions but never name anything.
NON_NAMES = frozenset(
    """
    The A An I It This That These Those There Then When Where What Which Who Whom
    Whose Why How Yes No Ok Okay Oh Hi Hey Hello Thanks Thank My Our Your His Her
    Their We You He She They And But Or So If Also Just Well Sure Did Do Does Is
    Was Were Are Have Has Had Can Could Will Would Should Today Yesterday Tomorrow
    Previously Earlier Later Now Recurring In On At For From To Of With By After
    Before During Since Last Next Every Some Any All Both Not Never Always Sometimes
    Lol Wow Great Nice Cool Good Bad Maybe Let Let's I'm I've I'd I'll Im
    """.split()
)

_PUNCT = set(string.punctuation)
_WORD = re.compile(r"[A-Za-z0-9]+(?:'[A-Za-z]+)?")
_SENT_SPLIT = re.compile(r"(?<=[.!?])\s+(?=\S)")


def _is_punct(ch: str) -> bool:
    return ch in _PUNCT or unicodedata.category(ch).startswith("P")


def normalize_tokens(text: str) -> list[str]:
    """Compatibility-decompose, lowercase, strip punctuation and articles, split."""
    s = unicodedata.normalize("NFKD", text).lower()
    s = "".join(" " if _is_punct(ch) else ch for ch in s)
    return [t for t in s.split() if t not in ARTICLES]


def normalize_text(text: str) -> str:
    return " ".join(normalize_tokens(text))


def words(text: str) -> list[str]:
    """Lowercased word tokens with possessive suffixes removed."""
    out = []
    for w in _WORD.findall(text):
        w = w.lower()
        if w.endswith("'s"):
            w = w[:-2]
        out.append(w)
    return out


def stem(word: str) -> str:
    """Crude suffix stripper; only needs to be stable, not linguistically right."""
    w = word.lower()
    for suf in ("ings", "ing", "ers", "er", "ed", "es", "s"):
        if len(w) - len(suf) >= 3 and w.endswith(suf):
            w = w[: -len(suf)]
            break
    if w.endswith("e") and len(w) > 4:
        w = w[:-1]
    return w


def content_stems(text: str) -> list[str]:
    return [stem(w) for w in words(text) if w not in STOPWORDS]


def split_sentences(text: str) -> list[str]:
    parts = [p.strip() for p in _SENT_SPLIT.split(text.strip())]
    return [p for p in parts if p]


_TOKEN_WITH_POS = re.compile(r"[A-Za-z][A-Za-z0-9]*(?:'[A-Za-z]+)?|[0-9]+|[^\sA-Za-z0-9]")


def proper_spans(text: str) -> list[str]:
    """Runs of consecutive capitalized multi-character tokens, possessives dropped.

    ``"Tim's favourite is Star Wars."`` -> ``["Tim", "Star Wars"]``.
    """
    spans: list[str] = []
    cur: list[str] = []
    for tok in _TOKEN_WITH_POS.findall(text):
        base = tok[:-2] if tok.endswith("'s") else tok
        is_cap = (
            len(base) > 1
            and base[0].isupper()
            and base[0].isalpha()
            and base not in NON_NAMES
        )
        if is_cap:
            cur.append(base)
            if base != tok:
                spans.append(" ".join(cur))
                cur = []
        else:
            if cur:
                spans.append(" ".join(cur))
                cur = []
    if cur:
        spans.append(" ".join(cur))
    seen: set[str] = set()
    out = []
    for s in spans:
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out
