"""Model-backed extraction of events, entities, relations and consolidated summaries.

Every operation is total: when the model fails or returns unusable JSON the
deterministic rule-based extractor takes over and the result is flagged
``degraded``.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Sequence

from . import mock_llm
from .core import EVENT_TYPES, MemoryFragment, TimeInterval
from .prompts import DEFAULT_CATALOG, PromptCatalog
from .providers import ChatRequest, Provider, ProviderError
from .text import normalize_text, split_sentences, words

logger = logging.getLogger(__name__)

ENTITY_TYPES = ("person", "organization", "location", "event", "product", "work", "date", "time", "other")

# Free-form type names a model might emit, folded into the closed set.
_TYPE_ALIASES = {
    "per": "person", "people": "person", "human": "person", "individual": "person",
    "org": "organization", "organisation": "organization", "company": "organization",
    "institution": "organization", "team": "organization", "group": "organization",
    "loc": "location", "place": "location", "city": "location", "country": "location", "gpe": "location",
    "activity": "event", "occasion": "event",
    "item": "product", "object": "product", "thing": "product",
    "book": "work", "movie": "work", "film": "work", "song": "work", "artwork": "work",
    "title": "work", "creative_work": "work",
    "day": "date", "year": "date", "month": "date",
    "hour": "time", "clock": "time",
}


def normalize_entity_type(raw: Any) -> str:
    t = str(raw or "other").strip().lower().replace(" ", "_")
    if t in ENTITY_TYPES:
        return t
    return _TYPE_ALIASES.get(t, "other")


@dataclass
class ExtractedEntity:
    surface_name: str
    entity_type: str = "other"
    span: str | None = None
    role: str | None = None
    salience: float = 0.5
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entity_type = normalize_entity_type(self.entity_type)
        if not normalize_text(self.surface_name):
            raise ValueError("entity surface name is empty after normalization")
        self.salience = min(1.0, max(0.0, float(self.salience)))


@dataclass
class ExtractedRelation:
    source: str
    target: str
    label: str
    confidence: float = 0.5
    span: str | None = None


@dataclass
class ExtractedEvent:
    """Model output for one event before ids and embeddings are assigned."""

    event_text: str
    frag_ids: list[str]
    time_range: TimeInterval
    event_type: str = "fact"
    participants: list[str] = field(default_factory=list)
    degraded: bool = False
    extra: dict = field(default_factory=dict)


@dataclass
class ConsolidatedItem:
    consolidated_text: str
    source_event_ids: list[str]
    time_range: TimeInterval
    memory_kind: str = "other"
    stability: str = "stable"
    invariants: list[str] = field(default_factory=list)
    evolution: list[str] = field(default_factory=list)
    conflicts: list[dict] = field(default_factory=list)
    confidence: float = 0.5

    def meta(self) -> dict:
        return {
            "memory_kind": self.memory_kind,
            "stability": self.stability,
            "invariants": list(self.invariants),
            "evolution": list(self.evolution),
            "conflicts": list(self.conflicts),
            "confidence": self.confidence,
            "source_event_ids": list(self.source_event_ids),
        }


@dataclass
class ConsolidationResult:
    items: list[ConsolidatedItem]
    unmerged_ids: list[str]
    degraded: bool = False


class Extractor:
    def __init__(self, provider: Provider, catalog: PromptCatalog | None = None):
        self.provider = provider
        self.catalog = catalog or DEFAULT_CATALOG
        self.warnings: Counter = Counter()

    def _ask(self, task: str, inputs: dict) -> Any:
        req = ChatRequest(
            system_prompt=self.catalog.template(task),
            user_payload=json.dumps(inputs, ensure_ascii=False, sort_keys=True),
            json_mode=True,
            task=task,
            stage="index",
            inputs=inputs,
        )
        return self.provider.chat(req).data

    # -- events -------------------------------------------------------------
    def extract_events(
        self, fragment: MemoryFragment, neighbors: Sequence[MemoryFragment] = ()
    ) -> list[ExtractedEvent]:
        inputs = {
            "fragments": [_frag_payload(f) for f in neighbors] + [_frag_payload(fragment)],
            "target_frag_id": fragment.id,
        }
        try:
            data = self._ask("extraction", inputs)
            raw_events = data["events"]
            if not isinstance(raw_events, list):
                raise TypeError("events is not a list")
        except (ProviderError, KeyError, TypeError) as exc:
            logger.warning("event extraction failed for %s (%s); sentence fallback", fragment.id, exc)
            self.warnings["extraction_fallback"] += 1
            return self._sentence_events(fragment)
        known = {f.id: f for f in neighbors}
        known[fragment.id] = fragment
        out = []
        for ev in raw_events:
            parsed = self._parse_event(ev, fragment, known)
            if parsed is not None:
                out.append(parsed)
        return out

    def _parse_event(self, ev: Any, fragment: MemoryFragment, known: dict) -> ExtractedEvent | None:
        if not isinstance(ev, dict):
            self.warnings["malformed_event"] += 1
            return None
        text = str(ev.get("event_text") or "").strip()
        if not words(text):
            self.warnings["empty_event"] += 1
            return None
        frag_ids = [f for f in ev.get("frag_ids") or [] if f in known]
        # Events drawn from neighbor context only belong to earlier fragments.
        if fragment.id not in frag_ids:
            frag_ids.append(fragment.id)
        try:
            tr = ev.get("time_range")
            time_range = TimeInterval.from_list(tr) if tr else fragment.interval
            if time_range.start <= 0:
                raise ValueError
        except (TypeError, ValueError):
            self.warnings["bad_time_range"] += 1
            time_range = fragment.interval
        etype = ev.get("event_type", "other")
        if etype not in EVENT_TYPES:
            self.warnings["unknown_event_type"] += 1
            etype = "other"
        participants = ev.get("participants") or []
        if not isinstance(participants, list):
            participants = []
        extra = {k: ev[k] for k in ("location", "confidence", "notes") if ev.get(k) is not None}
        return ExtractedEvent(
            event_text=text,
            frag_ids=frag_ids,
            time_range=time_range,
            event_type=etype,
            participants=[str(p) for p in participants],
            extra=extra,
        )

    def _sentence_events(self, fragment: MemoryFragment) -> list[ExtractedEvent]:
        text = mock_llm.resolve_first_person(fragment.text, fragment.speaker)
        return [
            ExtractedEvent(
                event_text=s,
                frag_ids=[fragment.id],
                time_range=fragment.interval,
                participants=[fragment.speaker] if fragment.speaker else [],
                degraded=True,
            )
            for s in split_sentences(text)
            if words(s)
        ]

    # -- entities and relations ---------------------------------------------
    def extract_entities_relations(
        self, fragment: MemoryFragment
    ) -> tuple[list[ExtractedEntity], list[ExtractedRelation], bool]:
        inputs = {"fragment": _frag_payload(fragment)}
        degraded = False
        try:
            data = self._ask("entities", inputs)
            raw_ents, raw_rels = data["entities"], data.get("relations") or []
            if not isinstance(raw_ents, list) or not isinstance(raw_rels, list):
                raise TypeError("entities/relations must be lists")
        except (ProviderError, KeyError, TypeError) as exc:
            logger.warning("entity extraction failed for %s (%s); rule fallback", fragment.id, exc)
            self.warnings["entity_fallback"] += 1
            data = mock_llm.extract_entities(inputs)
            raw_ents, raw_rels = data["entities"], data["relations"]
            degraded = True
        entities: list[ExtractedEntity] = []
        for e in raw_ents:
            try:
                entities.append(
                    ExtractedEntity(
                        surface_name=str(e["surface_name"]),
                        entity_type=e.get("entity_type", "other"),
                        span=e.get("span"),
                        role=e.get("role"),
                        salience=float(e.get("salience", 0.5) or 0.0),
                        meta=dict(e.get("meta") or {}),
                    )
                )
            except (KeyError, TypeError, ValueError):
                self.warnings["malformed_entity"] += 1
        names = {normalize_text(e.surface_name) for e in entities}
        relations: list[ExtractedRelation] = []
        for r in raw_rels:
            try:
                src, tgt = str(r["source"]), str(r["target"])
                label = normalize_text(str(r.get("label") or "related_to")).replace(" ", "_") or "related_to"
            except (KeyError, TypeError):
                self.warnings["malformed_relation"] += 1
                continue
            if normalize_text(src) == normalize_text(tgt):
                self.warnings["self_relation"] += 1
                continue
            if normalize_text(src) not in names or normalize_text(tgt) not in names:
                self.warnings["dangling_relation"] += 1
                continue
            conf = r.get("confidence", 0.5)
            conf = min(1.0, max(0.0, float(conf))) if isinstance(conf, (int, float)) else 0.5
            relations.append(ExtractedRelation(src, tgt, label, conf, r.get("span")))
        return entities, relations, degraded

    # -- consolidation ------------------------------------------------------
    def consolidate_payloads(self, children: Sequence[dict]) -> ConsolidationResult:
        """Merge child payloads ``{id, text, time_range}`` into consolidated items."""
        if not children:
            raise ValueError("consolidation needs at least one child")
        ids = [c["id"] for c in children]
        if len(children) == 1:
            return ConsolidationResult([], ids)
        inputs = {"children": [dict(c) for c in children]}
        try:
            data = self._ask("consolidation", inputs)
            raw_items = data["consolidated_events"]
            if not isinstance(raw_items, list):
                raise TypeError("consolidated_events is not a list")
        except (ProviderError, KeyError, TypeError) as exc:
            logger.warning("consolidation failed (%s); concatenation fallback", exc)
            self.warnings["consolidation_fallback"] += 1
            return self._concat(children)
        allowed = set(ids)
        items = []
        for it in raw_items:
            item = self._parse_item(it, allowed, children)
            if item is not None:
                items.append(item)
        cited = {i for it in items for i in it.source_event_ids}
        unmerged = [i for i in ids if i not in cited]
        return ConsolidationResult(items, unmerged)

    def _parse_item(self, it: Any, allowed: set, children: Sequence[dict]) -> ConsolidatedItem | None:
        if not isinstance(it, dict) or not str(it.get("consolidated_text") or "").strip():
            self.warnings["malformed_consolidation"] += 1
            return None
        src = [s for s in it.get("source_event_ids") or [] if s in allowed]
        src = list(dict.fromkeys(src))
        if len(src) < 2:
            self.warnings["undersourced_consolidation"] += 1
            return None
        span = [c["time_range"] for c in children if c["id"] in src]
        default_tr = TimeInterval(min(s for s, _ in span), max(e for _, e in span))
        try:
            tr = TimeInterval.from_list(it["time_range"]) if it.get("time_range") else default_tr
        except (TypeError, ValueError):
            tr = default_tr
        conf = it.get("confidence", 0.5)
        return ConsolidatedItem(
            consolidated_text=str(it["consolidated_text"]).strip(),
            source_event_ids=src,
            time_range=tr,
            memory_kind=str(it.get("memory_kind") or "other"),
            stability=str(it.get("stability") or "stable"),
            invariants=[str(x) for x in it.get("invariants") or []],
            evolution=[str(x) for x in it.get("evolution") or []],
            conflicts=[c for c in it.get("conflicts") or [] if isinstance(c, dict)],
            confidence=float(conf) if isinstance(conf, (int, float)) else 0.5,
        )

    def _concat(self, children: Sequence[dict]) -> ConsolidationResult:
        ordered = sorted(children, key=lambda c: (c["time_range"][0], c["id"]))
        item = ConsolidatedItem(
            consolidated_text=" ".join(c["text"].strip() for c in ordered),
            source_event_ids=[c["id"] for c in ordered],
            time_range=TimeInterval(
                min(c["time_range"][0] for c in children), max(c["time_range"][1] for c in children)
            ),
        )
        return ConsolidationResult([item], [], degraded=True)

    def summary_text(self, children: Sequence[dict]) -> tuple[str, dict]:
        """Parent payload text and metadata for a tree node with these children."""
        res = self.consolidate_payloads(children)
        if not res.items:
            # Nothing merged: keep the children verbatim, in time order.
            ordered = sorted(children, key=lambda c: (c["time_range"][0], c["id"]))
            text = " ".join(c["text"].strip() for c in ordered)
            return text, {"unmerged_event_ids": res.unmerged_ids, "degraded": res.degraded}
        text = " ".join(it.consolidated_text for it in res.items)
        for i in res.unmerged_ids:
            text += " " + next(c["text"].strip() for c in children if c["id"] == i)
        meta = {
            "items": [it.meta() for it in res.items],
            "unmerged_event_ids": res.unmerged_ids,
            "degraded": res.degraded,
        }
        return text, meta


def _frag_payload(f: MemoryFragment) -> dict:
    return {"frag_id": f.id, "speaker": f.speaker, "timestamp": f.timestamp, "text": f.text}
