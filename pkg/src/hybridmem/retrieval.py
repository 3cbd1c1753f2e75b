"""Online query pipeline: plan, gather evidence, answer, follow up, synthesize."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .config import DAY_SECONDS, EngineConfig
from .core import CostLedger, TimeInterval, format_timestamp
from .planning import QueryPlan, SubQuery, plan_query
from .prompts import DEFAULT_CATALOG, PromptCatalog
from .providers import ChatRequest, Provider, ProviderError
from .scoring import combined_score, event_level_score, memory_robustness, temporal_relevance
from .store import MemoryStore
from .graph import normalize_name
from .text import STOPWORDS, content_stems, normalize_text

logger = logging.getLogger(__name__)

INSUFFICIENT = "insufficient memory evidence"
_KIND_PRIORITY = {"event": 0, "summary": 1, "fragment": 2}


@dataclass
class EvidenceItem:
    source_kind: str
    source_id: str
    text: str
    interval: TimeInterval
    S: float
    T: float | None
    R: float
    F: float
    provenance: list[str]
    speaker: str = ""
    gather_score: float = 0.0

    @property
    def id(self) -> str:
        return f"{self.source_kind}:{self.source_id}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source_kind": self.source_kind,
            "source_id": self.source_id,
            "text": self.text,
            "speaker": self.speaker,
            "interval": self.interval.to_list(),
            "scores": {"S": self.S, "T": self.T, "R": self.R, "F": self.F},
            "provenance": list(self.provenance),
        }


@dataclass
class SubAnswer:
    sub_query_id: str
    subquery: str
    answer_text: str
    missing_info: bool
    evidence_used: list[str] = field(default_factory=list)
    follow_up: str | None = None
    resolved: bool = False
    confidence: float = 0.0
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.sub_query_id,
            "subquery": self.subquery,
            "answer": self.answer_text,
            "missing_info": self.missing_info,
            "evidence_used": list(self.evidence_used),
            "follow_up": self.follow_up,
            "resolved": self.resolved,
            "confidence": self.confidence,
            "degraded": self.degraded,
        }


@dataclass
class QueryResult:
    query: str
    query_time: int
    plan: QueryPlan
    final_answer: str
    sub_answers: list[SubAnswer]
    evidence: list[EvidenceItem]
    costs: dict
    pool_sizes: dict[str, int] = field(default_factory=dict)
    followup_pool_sizes: dict[str, int] = field(default_factory=dict)
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "query_time": self.query_time,
            "final_answer": self.final_answer,
            "plan": self.plan.to_dict(),
            "sub_answers": [a.to_dict() for a in self.sub_answers],
            "evidence": [e.to_dict() for e in self.evidence],
            "costs": self.costs,
            "pool_sizes": dict(self.pool_sizes),
            "followup_pool_sizes": dict(self.followup_pool_sizes),
            "degraded": self.degraded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)


def rank_key(item: EvidenceItem) -> tuple:
    return (-item.F, -item.interval.end, item.id)


def dedupe(items: Sequence[EvidenceItem]) -> list[EvidenceItem]:
    """Drop repeated source ids, then repeated normalized texts (events win over summaries over fragments)."""
    by_id: dict[str, EvidenceItem] = {}
    for it in items:
        if it.id not in by_id or it.F > by_id[it.id].F:
            by_id[it.id] = it
    by_text: dict[str, EvidenceItem] = {}
    for it in sorted(by_id.values(), key=lambda i: (_KIND_PRIORITY[i.source_kind], rank_key(i))):
        by_text.setdefault(normalize_text(it.text), it)
    return sorted(by_text.values(), key=rank_key)


class Retriever:
    def __init__(
        self,
        store: MemoryStore,
        provider: Provider,
        catalog: PromptCatalog | None = None,
        config: EngineConfig | None = None,
    ):
        self.store = store
        self.provider = provider
        self.catalog = catalog or DEFAULT_CATALOG
        self.config = config or store.config
        self.scoring = self.config.scoring
        self.rcfg = self.config.retrieval
        self.ledger: CostLedger = provider.ledger
        self._qvec_cache: dict[str, np.ndarray] = {}

    # -- helpers ------------------------------------------------------------
    def _qvec(self, text: str) -> np.ndarray:
        if text not in self._qvec_cache:
            self._qvec_cache[text] = self.provider.embed([text], stage="retrieve")[0]
        return self._qvec_cache[text]

    def _chat(self, task: str, inputs: dict, stage: str = "generate") -> Any:
        req = ChatRequest(
            system_prompt=self.catalog.template(task),
            user_payload=json.dumps(inputs, ensure_ascii=False, sort_keys=True),
            task=task,
            stage=stage,
            inputs=inputs,
        )
        return self.provider.chat(req).data

    # -- seeds --------------------------------------------------------------
    def locate_seed_entities(self, sq: SubQuery) -> list[str]:
        graph = self.store.graph
        if not graph.entities:
            return []
        toks = normalize_name(sq.text).split()
        names = graph.name_index()
        seeds: set[str] = set()
        for n in (1, 2, 3):
            for i in range(len(toks) - n + 1):
                gram = " ".join(toks[i : i + n])
                if n == 1 and gram in STOPWORDS:
                    continue
                seeds.update(names.get(gram, ()))
        keys = [f"entity:{e}" for e in sorted(graph.entities)]
        q = self._qvec(sq.text)
        for key, _ in self.store.vectors.top(q, keys, self.rcfg.seed_top, self.rcfg.seed_min_sim):
            seeds.add(key.split(":", 1)[1])
        return sorted(seeds)

    # -- gathering ----------------------------------------------------------
    def _graph_candidates(self, seeds: Sequence[str], scope: str) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {"fragment": set(), "event": set(), "summary": set()}
        if not seeds or not self.rcfg.use_graph:
            return out
        store = self.store
        ents = store.graph.neighbors(seeds)
        frags: set[str] = set()
        for e in ents:
            frags.update(store.graph.entities[e].fragment_links)
        for f in frags:
            for eid in store.frag_events.get(f, ()):
                out["event"].add(eid)
        if scope in ("SHORT", "MIXED"):
            out["fragment"] = {f for f in frags if f in store.fragments}
        if scope in ("LONG", "MIXED") and self.rcfg.use_tree:
            for eid in out["event"]:
                leaf = store.tree.leaf_of.get(eid)
                if leaf is not None:
                    for anc in store.tree.ancestors(leaf):
                        out["summary"].add(anc.id)
        return out

    def _scope_candidates(self, scope: str, hint: TimeInterval | None) -> dict[str, list[str]]:
        store = self.store
        window = hint.widen(DAY_SECONDS) if hint is not None else None
        cands = store.tree.nodes_in_scope(scope, window, store.events, store.fragment_time())
        if not self.rcfg.use_tree:
            cands["summary"] = []
        return cands

    def _item(self, kind: str, sid: str, qvec: np.ndarray, hint: TimeInterval | None, t: int) -> EvidenceItem | None:
        store = self.store
        if kind == "fragment":
            f = store.fragments[sid]
            text, iv, n_m, r_m, prov, speaker = f.text, f.interval, 0, f.timestamp, [sid], f.speaker
        elif kind == "event":
            e = store.events[sid]
            text, iv, n_m, r_m, prov, speaker = e.event_text, e.time_range, e.n_m, e.r_m, list(e.frag_ids), ""
        else:
            node = store.tree.nodes[sid]
            text, iv, n_m, r_m, speaker = node.text, node.time_range, node.n_m, node.r_m, ""
            prov = self._summary_provenance(sid)
        key = f"{kind}:{sid}"
        if key not in store.vectors or not text.strip():
            return None
        S = float(np.dot(store.vectors.get(key), qvec))
        T = temporal_relevance(iv, hint, self.scoring) if hint is not None else None
        R = memory_robustness(t, r_m, n_m, self.scoring)
        item = EvidenceItem(kind, sid, text, iv, S, T, R, 0.0, prov, speaker)
        item.gather_score = event_level_score(S, T, R, self.scoring)
        item.F = combined_score(S, T, R, self.scoring)
        return item

    def _summary_provenance(self, node_id: str) -> list[str]:
        tree, out, stack = self.store.tree, [], [node_id]
        while stack:
            n = tree.nodes[stack.pop()]
            if n.kind == "leaf":
                out.extend(self.store.events[n.event_id].frag_ids)
            else:
                stack.extend(n.child_ids)
        return sorted(set(out))

    def gather_and_rank(
        self,
        sq: SubQuery,
        seeds: Sequence[str],
        t: int,
        k: int,
        scope: str | None = None,
    ) -> tuple[list[EvidenceItem], int]:
        """Evidence chain of at most ``k`` items and the gathered pool size."""
        scope = scope or self.rcfg.scope_override or sq.memory_scope
        budget = 2 * k if sq.coverage_mode == "global" else k
        from_graph = self._graph_candidates(seeds, scope)
        from_scope = self._scope_candidates(scope, sq.hint_time)
        qvec = self._qvec(sq.text)
        items: list[EvidenceItem] = []
        for kind in ("fragment", "event", "summary"):
            for sid in sorted(set(from_graph[kind]) | set(from_scope[kind])):
                it = self._item(kind, sid, qvec, sq.hint_time, t)
                if it is not None:
                    items.append(it)
        items.sort(key=lambda i: (-i.gather_score, i.id))
        pool = items[:budget]
        if pool and self.rcfg.rerank:
            ranked = self.provider.rerank(sq.text, [i.text for i in pool])
            for idx, score in ranked:
                it = pool[idx]
                it.S = float(score)
                it.F = combined_score(it.S, it.T, it.R, self.scoring)
        chain = dedupe(pool)[:k]
        return chain, len(pool)

    # -- answering ----------------------------------------------------------
    def _profiles(self, seeds: Sequence[str]) -> list[dict]:
        if not self.rcfg.use_profiles:
            return []
        out = []
        for eid in seeds:
            node = self.store.graph.entities.get(eid)
            if node is not None and node.profile is not None:
                out.append(
                    {
                        "name": node.canonical_name,
                        "persistent_facts": node.profile.persistent_facts,
                        "recent_facts": node.profile.recent_facts,
                    }
                )
        return out

    def answer_subquery(
        self,
        sq: SubQuery,
        chain: Sequence[EvidenceItem],
        dep_answers: Mapping[str, SubAnswer],
        query: str = "",
        seeds: Sequence[str] = (),
    ) -> SubAnswer:
        if not chain:
            return SubAnswer(sq.id, sq.text, "", True)
        inputs = {
            "query": query or sq.text,
            "subquery": sq.text,
            "evidence": [
                {
                    "id": it.id,
                    "text": it.text,
                    "speaker": it.speaker,
                    "time": [format_timestamp(it.interval.start), format_timestamp(it.interval.end)],
                }
                for it in chain
            ],
            "dependency_answers": {d: a.answer_text for d, a in dep_answers.items()},
            "entity_profiles": self._profiles(seeds),
        }
        try:
            data = self._chat("reasoner", inputs)
        except ProviderError as exc:
            logger.warning("%s: reasoner failed (%s)", sq.id, exc)
            return SubAnswer(sq.id, sq.text, "", True, [i.id for i in chain], degraded=True)
        if not isinstance(data, dict):
            return SubAnswer(sq.id, sq.text, "", True, [i.id for i in chain], degraded=True)
        answer = str(data.get("conclusions") or data.get("answer") or "").strip()
        missing = bool(data.get("missing_info", not answer)) or not answer
        conf = data.get("confidence", 0.0)
        conf = float(conf) if isinstance(conf, (int, float)) else 0.0
        return SubAnswer(sq.id, sq.text, answer, missing, [i.id for i in chain], confidence=conf)

    def follow_up_is_valid(self, follow_up: str, sq: SubQuery, chain: Sequence[EvidenceItem]) -> bool:
        if not follow_up or not follow_up.strip():
            return False
        if normalize_text(follow_up) == normalize_text(sq.text):
            return False
        evidence = set()
        for it in chain:
            evidence.update(content_stems(it.text))
        anchors = (set(content_stems(follow_up)) & evidence) - set(content_stems(sq.text))
        return bool(anchors)

    def missing_info_query(
        self, sq: SubQuery, first: SubAnswer, chain: Sequence[EvidenceItem], query: str = ""
    ) -> str | None:
        """One anchored bridge query, or ``None`` when the model cannot produce a valid one."""
        inputs = {
            "query": query or sq.text,
            "subquery": sq.text,
            "reason_output": {
                "conclusions": first.answer_text,
                "confidence": first.confidence,
                "missing_info": first.missing_info,
            },
            "evidence": [it.text for it in chain],
        }
        for attempt in range(2):
            try:
                data = self._chat("missing_info", {**inputs, "attempt": attempt})
            except ProviderError as exc:
                logger.warning("%s: follow-up generation failed (%s)", sq.id, exc)
                return None
            q = str(data.get("missing_info_query") or "").strip() if isinstance(data, dict) else ""
            if self.follow_up_is_valid(q, sq, chain):
                return q
            self.ledger.bump("followup_rejected")
        return None

    def run_subquery(
        self, sq: SubQuery, t: int, k: int, dep_answers: Mapping[str, SubAnswer], query: str, scope: str | None
    ) -> tuple[SubAnswer, list[EvidenceItem], int, int]:
        """Answer one sub-query; returns (answer, chain, first-pass pool, follow-up pool)."""
        seeds = self.locate_seed_entities(sq)
        chain, pool = self.gather_and_rank(sq, seeds, t, k, scope)
        first = self.answer_subquery(sq, chain, dep_answers, query, seeds)
        if not first.missing_info or not chain or not self.rcfg.follow_up:
            return first, chain, pool, 0
        fq = self.missing_info_query(sq, first, chain, query)
        if fq is None:
            return first, chain, pool, 0
        self.ledger.bump("followup_rounds")
        bridge = SubQuery(sq.id + "f", fq, sq.memory_scope, sq.coverage_mode, sq.type_hint, [], sq.hint_time)
        seeds2 = self.locate_seed_entities(bridge)
        chain2, pool2 = self.gather_and_rank(bridge, seeds2, t, k, scope)
        bridge_answer = self.answer_subquery(bridge, chain2, {}, query, seeds2)
        merged = dedupe(list(chain) + list(chain2))
        context = {**dep_answers, bridge.id: bridge_answer}
        second = self.answer_subquery(sq, merged, context, query, sorted(set(seeds) | set(seeds2)))
        answer = second.answer_text or first.answer_text
        out = SubAnswer(
            sq.id,
            sq.text,
            answer,
            True,
            [i.id for i in merged],
            follow_up=fq,
            resolved=not second.missing_info,
            confidence=second.confidence,
            degraded=first.degraded or second.degraded,
        )
        return out, merged, pool, pool2

    def synthesize(self, query: str, answers: Sequence[SubAnswer]) -> tuple[str, bool]:
        texts = [a.answer_text for a in answers if a.answer_text.strip()]
        if not texts:
            return INSUFFICIENT, False
        inputs = {
            "query": query,
            "sub_answers": [
                {"id": a.sub_query_id, "subquery": a.subquery, "answer": a.answer_text, "missing_info": a.missing_info}
                for a in answers
            ],
        }
        try:
            data = self._chat("synthesis", inputs)
            final = str(data["answer"]).strip()
        except (ProviderError, KeyError, TypeError) as exc:
            logger.warning("synthesis failed (%s); concatenating sub-answers", exc)
            return "; ".join(texts), True
        return final or INSUFFICIENT, False

    # -- end to end ---------------------------------------------------------
    def query(self, text: str, t: int | None = None, k: int | None = None, scope: str | None = None) -> QueryResult:
        if t is None:
            t = self.store.last_ts or 0
        k = k or self.rcfg.k
        if k <= 0:
            raise ValueError("k must be positive")
        if scope is not None:
            scope = scope.upper()
            if scope not in ("SHORT", "LONG", "MIXED"):
                raise ValueError(f"unknown scope {scope!r}")
        start = len(self.ledger)
        plan = plan_query(self.provider, text, t, self.catalog)
        answers: dict[str, SubAnswer] = {}
        evidence: list[EvidenceItem] = []
        pools: dict[str, int] = {}
        followup_pools: dict[str, int] = {}
        for sq in plan.order():
            deps = {d: answers[d] for d in sq.deps}
            ans, chain, pool, fpool = self.run_subquery(sq, t, k, deps, text, scope)
            answers[sq.id] = ans
            evidence.extend(chain)
            pools[sq.id] = pool
            if fpool:
                followup_pools[sq.id] = fpool
        ordered = [answers[sq.id] for sq in plan.subqueries]
        final, degraded = self.synthesize(text, ordered)
        records = self.ledger.records[start:]
        slice_ledger = CostLedger()
        for r in records:
            slice_ledger.append(r)
        return QueryResult(
            query=text,
            query_time=t,
            plan=plan,
            final_answer=final,
            sub_answers=ordered,
            evidence=dedupe(evidence),
            costs=slice_ledger.totals(include_timing=False),
            pool_sizes=pools,
            followup_pool_sizes=followup_pools,
            degraded=degraded or plan.degraded or any(a.degraded for a in ordered),
        )
