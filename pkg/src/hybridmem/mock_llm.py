"""Deterministic rule-based stand-in for the chat model.

Each handler takes the structured inputs of one prompt task and returns the
JSON object the real model is asked to produce. Outputs depend only on the
inputs, so the whole pipeline is reproducible offline.
"""

from __future__ import annotations

import re
from itertools import combinations
from typing import Any, Callable

from .temporal import find_dates, resolve_hint, same_date
from .text import (
    NON_NAMES,
    STOPWORDS,
    content_stems,
    normalize_tokens,
    proper_spans,
    split_sentences,
    stem,
    words,
)

_DETERMINERS = {"a", "an", "the", "my", "his", "her", "their", "our", "some", "its", "your"}
_WH_ENTITY = re.compile(r"^\s*(which|who|whose|whom)\b", re.I)
_COUNTING = re.compile(
    r"\b(count|how many|how much|number of|total|times|frequency|rate|list|names of)\b", re.I
)
_LONG_CUES = re.compile(
    r"\b(prefer|prefers|preference|favou?rite|usually|always|generally|hobby|hobbies|"
    r"background|relationship|occupation|job|career|identity|education|degree|like to|enjoy)\b",
    re.I,
)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


_FIRST_PERSON = [
    (re.compile(r"\bI'm\b"), "{} is"),
    (re.compile(r"\bI've\b"), "{} has"),
    (re.compile(r"\bI\b"), "{}"),
    (re.compile(r"\b[Mm]y\b"), "{}'s"),
    (re.compile(r"\bme\b"), "{}"),
]


def resolve_first_person(text: str, speaker: str) -> str:
    """Rewrite first-person pronouns to the speaker name so facts stand alone."""
    if not speaker:
        return text
    for pat, repl in _FIRST_PERSON:
        text = pat.sub(repl.format(speaker), text)
    return text


def extract_events(inputs: dict) -> dict:
    events = []
    target = inputs.get("target_frag_id")
    for frag in inputs.get("fragments", []):
        # Earlier fragments are context only; they were extracted on their own turn.
        if target is not None and frag["frag_id"] != target:
            continue
        text = resolve_first_person(frag["text"], frag.get("speaker", ""))
        for sent in split_sentences(text):
            if not words(sent):
                continue
            ev = {
                "event_text": sent,
                "frag_ids": [frag["frag_id"]],
                "time_range": [frag["timestamp"], frag["timestamp"]],
                "event_type": "fact",
            }
            if frag.get("speaker"):
                ev["participants"] = [frag["speaker"]]
            events.append(ev)
    return {"events": events}


def _object_head(sentence: str, subject: str) -> tuple[str, str] | None:
    """(verb, object head) for sentences shaped ``<Subject> <verb> [det] <noun> ...``."""
    if not sentence.startswith(subject):
        return None
    rest = words(sentence[len(subject):])
    if len(rest) < 2:
        return None
    verb = rest[0]
    if verb in STOPWORDS or not verb.isalpha():
        return None
    i = 1
    while i < len(rest) and rest[i] in _DETERMINERS:
        i += 1
    if i >= len(rest):
        return None
    head = rest[i]
    if head in STOPWORDS or not head.isalpha() or len(head) < 3:
        return None
    return verb, head


def extract_entities(inputs: dict) -> dict:
    frag = inputs["fragment"]
    text = resolve_first_person(frag["text"], frag.get("speaker", ""))
    entities: dict[str, dict] = {}
    relations = []
    for sent in split_sentences(text):
        spans = proper_spans(sent)
        for s in spans:
            etype = "person" if s == frag.get("speaker") else "other"
            entities.setdefault(s, {"surface_name": s, "entity_type": etype, "salience": 0.5})
        for a, b in combinations(spans, 2):
            if a.lower() != b.lower():
                relations.append({"source": a, "target": b, "label": "related_to", "confidence": 0.5})
        if spans:
            vo = _object_head(sent, spans[0])
            if vo is not None:
                verb, head = vo
                if head.lower() not in {s.lower() for s in spans}:
                    entities.setdefault(head, {"surface_name": head, "entity_type": "other", "salience": 0.3})
                    relations.append(
                        {"source": spans[0], "target": head, "label": verb, "confidence": 0.5, "span": sent}
                    )
    return {"entities": list(entities.values()), "relations": relations}


# ---------------------------------------------------------------------------
# Consolidation
# ---------------------------------------------------------------------------


def _raw_tokens(text: str) -> list[str]:
    return re.findall(r"[A-Za-z0-9]+", text)


def _conflicting(a: str, b: str) -> bool:
    ta, tb = _raw_tokens(a), _raw_tokens(b)
    if len(ta) != len(tb) or ta == tb:
        return False
    diffs = [(x, y) for x, y in zip(ta, tb) if x.lower() != y.lower()]
    if not diffs:
        return False
    return all(
        (x[0].isupper() and y[0].isupper()) or (x.isdigit() and y.isdigit()) for x, y in diffs
    )


def consolidate(inputs: dict) -> dict:
    children = sorted(inputs.get("children", []), key=lambda c: (c["time_range"][0], c["id"]))
    if len(children) < 2:
        return {"consolidated_events": [], "unmerged_event_ids": [c["id"] for c in children]}
    texts: list[str] = []
    seen = set()
    for c in children:
        key = " ".join(normalize_tokens(c["text"]))
        if key not in seen:
            seen.add(key)
            texts.append(c["text"].strip())
    conflicts = []
    for x, y in combinations(children, 2):
        if _conflicting(x["text"], y["text"]):
            conflicts.append(
                {
                    "claim_a": x["text"],
                    "claim_b": y["text"],
                    "source_event_ids_a": [x["id"]],
                    "source_event_ids_b": [y["id"]],
                }
            )
    start = min(c["time_range"][0] for c in children)
    end = max(c["time_range"][1] for c in children)
    item = {
        "consolidated_text": "; ".join(texts),
        "memory_kind": "recurring_theme" if len(texts) == 1 else "other",
        "time_range": [start, end],
        "participants": [],
        "entity_hints": [],
        "source_event_ids": [c["id"] for c in children],
        "stability": "conflicting" if conflicts else "stable",
        "invariants": [],
        "evolution": [],
        "conflicts": conflicts,
        "confidence": 0.5,
    }
    return {"consolidated_events": [item], "unmerged_event_ids": []}


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------

_PAIR = re.compile(r"\b([A-Z][a-z]+(?:\s[A-Z][a-z]+)*)\s+and\s+([A-Z][a-z]+(?:\s[A-Z][a-z]+)*)\b")


def plan(inputs: dict) -> dict:
    query = inputs["query"]
    t = inputs.get("query_time")
    global_mode = bool(_COUNTING.search(query))
    scope = "LONG" if _LONG_CUES.search(query) else "SHORT"
    hint = resolve_hint(query, t)
    if scope == "LONG" and hint is not None:
        scope = "MIXED"
    texts = [query]
    m = _PAIR.search(query)
    if m and m.group(1) != m.group(2) and m.group(1) not in NON_NAMES and m.group(2) not in NON_NAMES:
        texts = []
        for name in (m.group(1), m.group(2)):
            q = query[: m.start()] + name + query[m.end():]
            q = re.sub(r"\s+both\b", "", q)
            texts.append(q)
        global_mode = True
    subs = []
    for i, text in enumerate(texts, start=1):
        subs.append(
            {
                "id": f"q{i}",
                "text": text,
                "memory_scope": scope,
                "coverage_mode": "global" if global_mode else "local",
                "type_hint": None,
                "deps": [],
                "hint_time": hint.to_list() if hint is not None else None,
            }
        )
    return {"subqueries": subs, "dependency_graph": {s["id"]: [] for s in subs}}


# ---------------------------------------------------------------------------
# Reasoning, follow-up, synthesis
# ---------------------------------------------------------------------------


def _spans_outside(text: str, question: str) -> list[str]:
    q = set(content_stems(question))
    return [s for s in proper_spans(text) if not set(content_stems(s)) <= q]


_WHICH_HEAD = re.compile(r"^\s*(?:which|what)\s+([a-z]+)", re.I)
_PLACE_HEADS = {"city", "country", "place", "town", "state", "destination", "location", "island"}


def _answer_spans(text: str, known: str, question: str) -> list[str]:
    """Outside spans that could fill the question's slot.

    A span in a locative phrase ("to Tokyo") names a place, so it cannot
    answer "which airline" or "which composer".
    """
    spans = _spans_outside(text, known)
    m = _WHICH_HEAD.search(question)
    if not m or m.group(1).lower() in _PLACE_HEADS:
        return spans
    return [s for s in spans if not re.search(r"\b(?:to|in|at|from|near)\s+(?:the\s+)?" + re.escape(s), text)]


def reason(inputs: dict) -> dict:
    """Pick the evidence item that best covers the sub-question.

    Answers to prerequisite sub-questions anchor the search: when they name
    something the sub-question does not, only evidence mentioning it is used.
    """
    sq = inputs["subquery"]
    evidence = inputs.get("evidence") or []
    if not evidence:
        return {"conclusions": "", "confidence": 0.0, "missing_info": True}
    deps = [a for a in (inputs.get("dependency_answers") or {}).values() if a]
    dep_spans = [s for a in deps for s in _spans_outside(a, sq)]
    pool = evidence
    if dep_spans:
        anchored = [ev for ev in evidence if any(s in ev["text"] for s in dep_spans)]
        pool = anchored or evidence
    known = sq + " " + " ".join(dep_spans)
    target = set(content_stems(sq))

    days = [f"{d.year:04d}-{d.month:02d}-{d.day:02d}" for d in find_dates(sq) if d.year and d.day]

    def key(item):
        i, ev = item
        overlap = len(target & set(content_stems(ev["text"])))
        span = ev.get("time") or []
        if span and any(span[0][:10] <= day <= span[-1][:10] for day in days):
            overlap += 1
        specific = bool(_answer_spans(ev["text"], known, sq))
        return (overlap, specific, -i)

    i, best = max(enumerate(pool), key=key)
    if key((i, best))[0] == 0:
        return {"conclusions": "", "confidence": 0.0, "missing_info": True}
    text = best["text"]
    if _WH_ENTITY.search(sq) and not _answer_spans(text, known, sq):
        return {"conclusions": text, "confidence": 0.3, "missing_info": True}
    return {"conclusions": text, "confidence": 0.9, "missing_info": False}


def missing_info_query(inputs: dict) -> dict:
    """Ask for the first unspecified detail of the partial conclusion.

    The detail is the first run of content words absent from the sub-question,
    so the follow-up is anchored on the evidence and cannot echo the question.
    """
    sq = inputs["subquery"]
    ro = inputs.get("reason_output") or {}
    source = ro.get("conclusions") or ""
    if not source:
        ev = inputs.get("evidence") or []
        source = ev[0] if ev else ""
    sq_stems = set(content_stems(sq))
    names = {w.lower() for s in proper_spans(source) for w in s.split()}
    run: list[str] = []
    for w in words(source):
        fresh = w not in STOPWORDS and w not in names and stem(w) not in sq_stems and w.isalpha()
        if fresh:
            run.append(w)
        elif run:
            break
    if not run:
        return {"missing_info_query": sq}
    ents = proper_spans(source)
    who = ents[0] if ents else "the speaker"
    return {"missing_info_query": f"What is the {' '.join(run)} that {who} mentioned?"}


def synthesize(inputs: dict) -> dict:
    answers = [a["answer"] for a in inputs.get("sub_answers", []) if (a.get("answer") or "").strip()]
    if not answers:
        return {"answer": "insufficient memory evidence"}
    if len(answers) == 1:
        return {"answer": answers[0]}
    q = set(content_stems(inputs.get("query", "")))
    common = set(content_stems(answers[0]))
    for a in answers[1:]:
        common &= set(content_stems(a))
    common -= q
    if common:
        picked: list[str] = []
        for w in words(answers[0]):
            if w not in STOPWORDS and stem(w) in common and w not in picked:
                picked.append(w)
        return {"answer": " ".join(picked)}
    return {"answer": "; ".join(answers)}


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

_PLACE = re.compile(r"\b(?:at|in|by|near|to)\s+(?:the|a|an)\s+[a-z]+")
_NUMBER = re.compile(r"\b(\d+(?:\.\d+)?|one|two|three|four|five|six|seven|eight|nine|ten|once|twice)\b", re.I)


def simplify(inputs: dict) -> dict:
    question, answer = inputs["question"], inputs["answer"]
    if len(answer.split()) <= 3:
        return {"answer": answer}
    ql = question.lower().strip()
    if ql.startswith(("how many", "how much", "how often")):
        m = _NUMBER.search(answer)
        if m:
            return {"answer": m.group(0)}
    if ql.startswith("when") or "what date" in ql or "what year" in ql:
        dates = find_dates(answer)
        if dates:
            return {"answer": dates[0].span}
    if ql.startswith("where"):
        m = _PLACE.search(answer)
        if m:
            return {"answer": m.group(0)}
    if _WH_ENTITY.search(question) or re.search(r"\bname\b", ql):
        spans = _spans_outside(answer, question)
        if spans:
            return {"answer": spans[-1]}
    return {"answer": answer}


def judge(inputs: dict) -> dict:
    gold, pred = inputs["gold_answer"], inputs["generated_answer"]
    gd, pd = find_dates(gold), find_dates(pred)
    if gd and any(same_date(g, p) for g in gd for p in pd):
        return {"label": "CORRECT"}
    gs = set(content_stems(gold)) or {stem(t) for t in normalize_tokens(gold)}
    ps = set(content_stems(pred)) | {stem(t) for t in normalize_tokens(pred)}
    if gs and gs <= ps:
        return {"label": "CORRECT"}
    return {"label": "WRONG"}


HANDLERS: dict[str, Callable[[dict], Any]] = {
    "extraction": extract_events,
    "entities": extract_entities,
    "consolidation": consolidate,
    "planner": plan,
    "reasoner": reason,
    "missing_info": missing_info_query,
    "synthesis": synthesize,
    "simplify": simplify,
    "judge": judge,
}
