"""Entity-centered knowledge graph with resolution, provenance and profiles."""

from __future__ import annotations

import json
import logging
import re
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .config import GraphConfig
from .core import MemoryEvent
from .extraction import ExtractedEntity, ExtractedRelation

logger = logging.getLogger(__name__)

TITLES = frozenset({"dr", "mr", "mrs", "ms", "miss", "prof", "sir", "madam", "mx"})
_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


class UnresolvedEntityError(KeyError):
    def __init__(self, surface: str):
        super().__init__(f"relation endpoint {surface!r} was not resolved to an entity")
        self.surface = surface


def normalize_name(name: str) -> str:
    """Lowercase, drop possessives and punctuation, collapse whitespace."""
    s = unicodedata.normalize("NFKC", name).lower()
    s = re.sub(r"['’]s\b", "", s)
    s = s.translate(_PUNCT_TABLE)
    s = "".join(" " if unicodedata.category(c).startswith("P") else c for c in s)
    return " ".join(s.split())


def strip_titles(name: str) -> str:
    toks = name.split()
    while toks and toks[0] in TITLES:
        toks = toks[1:]
    return " ".join(toks)


def token_jaccard(a: str, b: str) -> float:
    sa, sb = set(a.split()), set(b.split())
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def edit_similarity(a: str, b: str) -> float:
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def types_compatible(a: str, b: str) -> bool:
    return a == b or a == "other" or b == "other"


@dataclass
class EntityProfile:
    entity_id: str
    persistent_facts: list[str] = field(default_factory=list)
    recent_facts: list[str] = field(default_factory=list)
    sources: dict[str, list[str]] = field(default_factory=dict)
    updated_at: int = 0

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "persistent_facts": list(self.persistent_facts),
            "recent_facts": list(self.recent_facts),
            "sources": {k: list(v) for k, v in sorted(self.sources.items())},
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EntityProfile":
        return cls(
            entity_id=d["entity_id"],
            persistent_facts=list(d.get("persistent_facts", [])),
            recent_facts=list(d.get("recent_facts", [])),
            sources={k: list(v) for k, v in (d.get("sources") or {}).items()},
            updated_at=int(d.get("updated_at", 0)),
        )


@dataclass
class EntityNode:
    id: str
    canonical_name: str
    entity_type: str
    aliases: set[str] = field(default_factory=set)
    fragment_links: set[str] = field(default_factory=set)
    profile: EntityProfile | None = None
    created_at: int = 0
    updated_at: int = 0

    def names(self) -> list[str]:
        return [self.canonical_name] + sorted(self.aliases)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "canonical_name": self.canonical_name,
            "entity_type": self.entity_type,
            "aliases": sorted(self.aliases),
            "fragment_links": sorted(self.fragment_links),
            "profile": self.profile.to_dict() if self.profile else None,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EntityNode":
        return cls(
            id=d["id"],
            canonical_name=d["canonical_name"],
            entity_type=d["entity_type"],
            aliases=set(d.get("aliases", [])),
            fragment_links=set(d.get("fragment_links", [])),
            profile=EntityProfile.from_dict(d["profile"]) if d.get("profile") else None,
            created_at=int(d.get("created_at", 0)),
            updated_at=int(d.get("updated_at", 0)),
        )


@dataclass
class RelationEdge:
    id: str
    head: str
    tail: str
    label: str
    weight: float = 0.5
    timestamps: list[int] = field(default_factory=list)
    evidence: set[str] = field(default_factory=set)
    edge_kind: str = "semantic"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "head": self.head,
            "tail": self.tail,
            "label": self.label,
            "weight": self.weight,
            "timestamps": list(self.timestamps),
            "evidence": sorted(self.evidence),
            "edge_kind": self.edge_kind,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RelationEdge":
        return cls(
            id=d["id"],
            head=d["head"],
            tail=d["tail"],
            label=d["label"],
            weight=float(d["weight"]),
            timestamps=[int(t) for t in d.get("timestamps", [])],
            evidence=set(d.get("evidence", [])),
            edge_kind=d.get("edge_kind", "semantic"),
        )


class GraphIndex:
    def __init__(self, config: GraphConfig | None = None):
        self.config = config or GraphConfig()
        self.entities: dict[str, EntityNode] = {}
        self.edges: dict[str, RelationEdge] = {}
        self.warnings: Counter = Counter()
        self._by_name: dict[str, list[str]] = {}
        self._triples: dict[tuple[str, str, str], str] = {}
        self._overlaps: dict[tuple[str, str], str] = {}
        self._adj: dict[str, set[str]] = {}
        self._frag_entities: dict[str, set[str]] = {}
        self._ent_seq = 0
        self._edge_seq = 0

    # -- bookkeeping --------------------------------------------------------
    def _index_name(self, name: str, eid: str) -> None:
        ids = self._by_name.setdefault(name, [])
        if eid not in ids:
            ids.append(eid)

    def _link(self, eid: str, frag_id: str, ts: int) -> None:
        node = self.entities[eid]
        node.fragment_links.add(frag_id)
        node.updated_at = max(node.updated_at, ts)
        self._frag_entities.setdefault(frag_id, set()).add(eid)

    def entities_for_fragment(self, frag_id: str) -> set[str]:
        return set(self._frag_entities.get(frag_id, ()))

    def lookup(self, name: str) -> list[str]:
        """Entity ids whose canonical name or an alias equals ``name`` after normalization."""
        return list(self._by_name.get(normalize_name(name), ()))

    def name_index(self) -> Mapping[str, list[str]]:
        return self._by_name

    # -- resolution ---------------------------------------------------------
    def _pick(self, ids: Iterable[str], etype: str) -> str | None:
        ok = [i for i in ids if types_compatible(self.entities[i].entity_type, etype)]
        if not ok:
            return None
        same = [i for i in ok if self.entities[i].entity_type == etype]
        return min(same or ok)

    def _fuzzy(self, name: str, etype: str) -> tuple[str, float] | None:
        cfg = self.config
        stripped = strip_titles(name)
        best: tuple[float, str] | None = None
        for eid in sorted(self.entities):
            node = self.entities[eid]
            if not types_compatible(node.entity_type, etype):
                continue
            score = 0.0
            for cand in node.names():
                jac = token_jaccard(name, cand)
                if jac >= cfg.jaccard_threshold:
                    score = max(score, jac)
                cs = strip_titles(cand)
                if stripped and cs:
                    ed = edit_similarity(stripped, cs)
                    if ed >= cfg.edit_threshold:
                        score = max(score, ed)
            if score > 0 and (best is None or score > best[0]):
                best = (score, eid)
        return (best[1], best[0]) if best else None

    def resolve_entity(self, ex: ExtractedEntity, frag_id: str, ts: int = 0) -> tuple[str, str]:
        """Map an extracted mention to an entity id: ``exact``, ``fuzzy_merge`` or ``created``."""
        name = normalize_name(ex.surface_name)
        etype = ex.entity_type
        if not name:
            raise ValueError("entity name is empty after normalization")
        eid = self._pick(self._by_name.get(name, ()), etype)
        if eid is not None:
            resolution = "exact"
        else:
            hit = self._fuzzy(name, etype)
            if hit is not None:
                eid, resolution = hit[0], "fuzzy_merge"
                node = self.entities[eid]
                if name != node.canonical_name:
                    node.aliases.add(name)
                    self._index_name(name, eid)
            else:
                self._ent_seq += 1
                eid = f"ent{self._ent_seq:06d}"
                self.entities[eid] = EntityNode(eid, name, etype, created_at=ts, updated_at=ts)
                self._index_name(name, eid)
                self._adj[eid] = set()
                resolution = "created"
        node = self.entities[eid]
        if node.entity_type == "other" and etype != "other":
            node.entity_type = etype
        self._link(eid, frag_id, ts)
        return eid, resolution

    # -- relations ----------------------------------------------------------
    def insert_relation(
        self,
        rel: ExtractedRelation,
        frag_id: str,
        resolved: Mapping[str, str],
        ts: int = 0,
    ) -> tuple[str | None, bool]:
        """Add or extend the semantic edge for ``rel``; ``resolved`` maps normalized surface -> id."""
        ends = []
        for surface in (rel.source, rel.target):
            eid = resolved.get(normalize_name(surface))
            if eid is None or eid not in self.entities:
                raise UnresolvedEntityError(surface)
            ends.append(eid)
        head, tail = ends
        if head == tail:
            logger.warning("dropping self-loop relation %r on %s", rel.label, head)
            self.warnings["self_loop"] += 1
            return None, False
        label = normalize_name(rel.label).replace(" ", "_") or "related_to"
        key = (head, label, tail)
        if key in self._triples:
            edge = self.edges[self._triples[key]]
            edge.evidence.add(frag_id)
            edge.timestamps.append(ts)
            edge.weight = max(edge.weight, float(rel.confidence))
            return edge.id, True
        edge = self._new_edge(head, tail, label, float(rel.confidence), "semantic")
        edge.evidence.add(frag_id)
        edge.timestamps.append(ts)
        self._triples[key] = edge.id
        return edge.id, False

    def _new_edge(self, head: str, tail: str, label: str, weight: float, kind: str) -> RelationEdge:
        self._edge_seq += 1
        edge = RelationEdge(f"r{self._edge_seq:06d}", head, tail, label, weight, edge_kind=kind)
        self.edges[edge.id] = edge
        self._adj.setdefault(head, set()).add(edge.id)
        self._adj.setdefault(tail, set()).add(edge.id)
        return edge

    def repair_overlap_edges(self) -> int:
        """Link single-token names to multi-token names that start or end with them."""
        by_edge_token: dict[str, list[str]] = {}
        for eid in sorted(self.entities):
            toks = self.entities[eid].canonical_name.split()
            if len(toks) > 1:
                for tok in {toks[0], toks[-1]}:
                    by_edge_token.setdefault(tok, []).append(eid)
        added = 0
        for eid in sorted(self.entities):
            node = self.entities[eid]
            if len(node.canonical_name.split()) != 1:
                continue
            for other in by_edge_token.get(node.canonical_name, ()):
                if not types_compatible(node.entity_type, self.entities[other].entity_type):
                    continue
                key = (min(eid, other), max(eid, other))
                if key in self._overlaps:
                    continue
                edge = self._new_edge(key[0], key[1], "overlap", 0.5, "overlap")
                self._overlaps[key] = edge.id
                added += 1
        return added

    # -- profiles -----------------------------------------------------------
    def is_salient(self, eid: str) -> bool:
        node = self.entities[eid]
        return (
            len(node.fragment_links) >= self.config.salience_links
            or node.entity_type in self.config.salient_types
        )

    def update_profile(self, eid: str, linked_events: Sequence[MemoryEvent]) -> EntityProfile | None:
        node = self.entities[eid]
        if not self.is_salient(eid):
            node.profile = None
            return None
        events = sorted(linked_events, key=lambda e: e.id)
        sources: dict[str, list[str]] = {}
        persistent = []
        for e in events:
            sources.setdefault(e.event_text, [])
            for f in e.frag_ids:
                if f not in sources[e.event_text]:
                    sources[e.event_text].append(f)
            if e.n_m >= 2 and e.event_text not in persistent:
                persistent.append(e.event_text)
        recent = []
        for e in sorted(events, key=lambda e: (-e.time_range.end, e.id)):
            if e.event_text not in recent:
                recent.append(e.event_text)
            if len(recent) >= self.config.recent_facts:
                break
        node.profile = EntityProfile(eid, persistent, recent, sources, node.updated_at)
        return node.profile

    # -- traversal ----------------------------------------------------------
    def ranked_neighbors(self, eid: str) -> list[str]:
        best: dict[str, tuple[float, int]] = {}
        for edge_id in self._adj.get(eid, ()):
            e = self.edges[edge_id]
            other = e.tail if e.head == eid else e.head
            cand = (e.weight, len(e.evidence))
            if other not in best or cand > best[other]:
                best[other] = cand
        return sorted(best, key=lambda o: (-best[o][0], -best[o][1], o))

    def neighbors(self, seeds: Iterable[str], hops: int | None = None, fanout: int | None = None) -> set[str]:
        hops = self.config.hops if hops is None else hops
        fanout = self.config.fanout if fanout is None else fanout
        if hops < 0:
            raise ValueError("hops must be non-negative")
        seen = {s for s in seeds if s in self.entities}
        frontier = sorted(seen)
        for _ in range(hops):
            nxt = []
            for eid in frontier:
                for o in self.ranked_neighbors(eid)[:fanout]:
                    if o not in seen:
                        seen.add(o)
                        nxt.append(o)
            if not nxt:
                break
            frontier = sorted(nxt)
        return seen

    # -- export -------------------------------------------------------------
    def dump(self) -> dict:
        return {
            "entities": [self.entities[k].to_dict() for k in sorted(self.entities)],
            "edges": [self.edges[k].to_dict() for k in sorted(self.edges)],
            "links": {f: sorted(v) for f, v in sorted(self._frag_entities.items())},
        }

    def dumps(self) -> str:
        return json.dumps(self.dump(), sort_keys=True, indent=2, ensure_ascii=False)

    def restore(self, entities: list[dict], edges: list[dict], ent_seq: int, edge_seq: int) -> None:
        self.__init__(self.config)
        for d in entities:
            node = EntityNode.from_dict(d)
            self.entities[node.id] = node
            self._adj.setdefault(node.id, set())
            for n in node.names():
                self._index_name(n, node.id)
            for f in node.fragment_links:
                self._frag_entities.setdefault(f, set()).add(node.id)
        for d in edges:
            e = RelationEdge.from_dict(d)
            self.edges[e.id] = e
            self._adj.setdefault(e.head, set()).add(e.id)
            self._adj.setdefault(e.tail, set()).add(e.id)
            if e.edge_kind == "semantic":
                self._triples[(e.head, e.label, e.tail)] = e.id
            else:
                self._overlaps[(min(e.head, e.tail), max(e.head, e.tail))] = e.id
        self._ent_seq, self._edge_seq = ent_seq, edge_seq
