"""Indexing and query orchestration over one :class:`MemoryStore`."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .config import DAY_SECONDS, EngineConfig
from .core import CostLedger, MemoryEvent, MemoryFragment, make_fragment
from .extraction import ExtractedEvent, Extractor
from .graph import UnresolvedEntityError, normalize_name
from .prompts import DEFAULT_CATALOG, PromptCatalog
from .providers import Provider, make_provider
from .store import MemoryStore
from .text import normalize_text
from .tree import active_levels

logger = logging.getLogger(__name__)


@dataclass
class IngestReport:
    fragments_added: int = 0
    fragments_skipped: int = 0
    events_created: int = 0
    events_reinforced: int = 0
    tree_nodes_created: int = 0
    consolidations: int = 0
    entities_created: int = 0
    entity_merges: dict[str, int] = field(default_factory=dict)
    relations_added: int = 0
    relations_merged: int = 0
    overlap_edges_added: int = 0
    fragment_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _TreeServices:
    """Callbacks the tree uses to read leaf text, consolidate, embed and reinforce."""

    def __init__(self, engine: "MemoryEngine"):
        self.engine = engine

    def leaf_text(self, event_id: str) -> str:
        return self.engine.store.events[event_id].event_text

    def consolidate(self, children: list[dict]) -> tuple[str, dict]:
        return self.engine.extractor.summary_text(children)

    def embed_summary(self, node_id: str, text: str) -> None:
        self.engine.store.vectors.put(f"summary:{node_id}", self.engine.provider.embed([text])[0])

    def reinforce(self, kind: str, item_id: str, ts: int) -> None:
        ev = self.engine.store.events[item_id]
        ev.n_m += 1
        ev.r_m = max(ev.r_m, ts)
        self.engine._touched_events.add(item_id)


class MemoryEngine:
    """Owns a store, a provider and the prompts; exposes ``ingest`` and ``query``."""

    def __init__(
        self,
        config: EngineConfig | None = None,
        provider: Provider | None = None,
        store: MemoryStore | None = None,
        catalog: PromptCatalog | None = None,
        ledger: CostLedger | None = None,
    ):
        self.config = config or (store.config if store is not None else EngineConfig())
        self.ledger = ledger if ledger is not None else (provider.ledger if provider else CostLedger())
        self.provider = provider or make_provider(self.config.provider, self.ledger)
        self.ledger = self.provider.ledger
        self.store = store or MemoryStore(self.config)
        if self.config.tree.regen_every is None and self.provider.mode == "live":
            # Debounce summary regeneration against a paid model.
            self.store.tree.regen_every = 2
        self.catalog = catalog or DEFAULT_CATALOG
        self.extractor = Extractor(self.provider, self.catalog)
        self._services = _TreeServices(self)
        self._touched_events: set[str] = set()

    # -- indexing -----------------------------------------------------------
    def ingest(self, records: Iterable[Mapping[str, Any] | MemoryFragment], conversation_id: str = "default") -> IngestReport:
        report = IngestReport()
        touched_entities: set[str] = set()
        self._touched_events = set()
        for raw in records:
            frag = raw if isinstance(raw, MemoryFragment) else make_fragment(raw, conversation_id)
            if frag.id in self.store.fragments:
                report.fragments_skipped += 1
                continue
            self._ingest_fragment(frag, report, touched_entities)
        report.overlap_edges_added = self.store.graph.repair_overlap_edges()
        self.store.tree.flush(self._services)
        for eid in self._touched_events:
            for f in self.store.events[eid].frag_ids:
                touched_entities.update(self.store.graph.entities_for_fragment(f))
        for ent in sorted(touched_entities):
            self.store.graph.update_profile(ent, self.store.events_for_entity(ent))
        self.store.counters["extraction_warnings"] = sum(self.extractor.warnings.values())
        return report

    def _ingest_fragment(self, frag: MemoryFragment, report: IngestReport, touched: set[str]) -> None:
        store = self.store
        window = self.config.extraction.neighbor_window
        neighbors = store.conversation_fragments(frag.conversation_id)[-window:] if window > 0 else []
        store.fragments[frag.id] = frag
        store.frag_events.setdefault(frag.id, [])
        report.fragments_added += 1
        report.fragment_ids.append(frag.id)
        store.vectors.put(f"fragment:{frag.id}", self.provider.embed([frag.text])[0])

        for ex in self.extractor.extract_events(frag, neighbors):
            self._add_event(ex, report)

        entities, relations, degraded = self.extractor.extract_entities_relations(frag)
        if degraded:
            store.counters["entity_fallbacks"] += 1
        resolved: dict[str, str] = {}
        merges: dict[str, int] = dict(report.entity_merges)
        for ent in entities:
            eid, how = store.graph.resolve_entity(ent, frag.id, frag.timestamp)
            resolved[normalize_name(ent.surface_name)] = eid
            merges[how] = merges.get(how, 0) + 1
            touched.add(eid)
            if how == "created":
                report.entities_created += 1
                node = store.graph.entities[eid]
                store.vectors.put(f"entity:{eid}", self.provider.embed([node.canonical_name])[0])
        report.entity_merges = merges
        for rel in relations:
            try:
                edge_id, merged = store.graph.insert_relation(rel, frag.id, resolved, frag.timestamp)
            except UnresolvedEntityError as exc:
                logger.warning("%s", exc)
                store.counters["unresolved_relations"] += 1
                continue
            if edge_id is None:
                continue
            if merged:
                report.relations_merged += 1
            else:
                report.relations_added += 1

    def _add_event(self, ex: ExtractedEvent, report: IngestReport) -> None:
        store = self.store
        norm = normalize_text(ex.event_text)
        ts = ex.time_range.end
        existing = store.event_by_norm.get(norm)
        if existing is not None:
            # A repeated mention reinforces the stored event instead of adding a leaf.
            ev = store.events[existing]
            ev.n_m += 1
            ev.r_m = max(ev.r_m, ts)
            for fid in ex.frag_ids:
                if fid not in ev.frag_ids:
                    ev.frag_ids.append(fid)
                    store.frag_events.setdefault(fid, []).append(ev.id)
            self._touched_events.add(ev.id)
            report.events_reinforced += 1
            return
        eid = store.next_event_id()
        ev = MemoryEvent(
            id=eid,
            event_text=ex.event_text,
            frag_ids=list(ex.frag_ids),
            time_range=ex.time_range,
            event_type=ex.event_type,
            participants=list(ex.participants),
            embedding_id=f"event:{eid}",
            degraded=ex.degraded,
            extra=dict(ex.extra),
        )
        store.events[eid] = ev
        store.event_by_norm[norm] = eid
        for fid in ev.frag_ids:
            store.frag_events.setdefault(fid, []).append(eid)
        vec = self.provider.embed([ev.event_text])[0]
        store.vectors.put(ev.embedding_id, vec)
        age_days = max(0, (store.last_ts or 0) - (store.first_ts or 0)) / DAY_SECONDS
        levels = active_levels(age_days, store.tree.max_level)
        ins = store.tree.insert_event(ev, vec, levels, self._services)
        report.events_created += 1
        report.tree_nodes_created += len(ins.created_node_ids)
        report.consolidations += ins.consolidations_triggered
        self.last_insertion = ins

    # -- querying -----------------------------------------------------------
    def retriever(self):
        from .retrieval import Retriever

        return Retriever(self.store, self.provider, self.catalog, self.config)

    def query(self, text: str, t: int | None = None, k: int | None = None, scope: str | None = None):
        return self.retriever().query(text, t=t, k=k, scope=scope)
