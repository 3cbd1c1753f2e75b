"""Query decomposition into validated sub-query plans."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any

from .core import TimeInterval
from .prompts import DEFAULT_CATALOG, PromptCatalog
from .providers import ChatRequest, Provider, ProviderError
from .temporal import resolve_hint

logger = logging.getLogger(__name__)

SCOPES = ("SHORT", "LONG", "MIXED")
COVERAGE = ("local", "global")
MAX_SUBQUERIES = 5

COUNTING = re.compile(
    r"\b(count|how many|how much|number of|total|times|frequency|rate|list|names of)\b", re.I
)


class PlanValidationError(ValueError):
    pass


@dataclass
class SubQuery:
    id: str
    text: str
    memory_scope: str = "MIXED"
    coverage_mode: str = "local"
    type_hint: str | None = None
    deps: list[str] = field(default_factory=list)
    hint_time: TimeInterval | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "memory_scope": self.memory_scope,
            "coverage_mode": self.coverage_mode,
            "type_hint": self.type_hint,
            "deps": list(self.deps),
            "hint_time": self.hint_time.to_list() if self.hint_time else None,
        }


@dataclass
class QueryPlan:
    query: str
    subqueries: list[SubQuery]
    degraded: bool = False

    @property
    def dependency_graph(self) -> dict[str, list[str]]:
        return {sq.id: list(sq.deps) for sq in self.subqueries}

    def order(self) -> list[SubQuery]:
        """Topological order; ties resolved by plan position."""
        by_id = {sq.id: sq for sq in self.subqueries}
        done: set[str] = set()
        out: list[SubQuery] = []
        while len(out) < len(self.subqueries):
            ready = [sq for sq in self.subqueries if sq.id not in done and all(d in done for d in sq.deps)]
            if not ready:
                raise PlanValidationError("dependency cycle")
            out.append(ready[0])
            done.add(ready[0].id)
        assert set(by_id) == done
        return out

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "subqueries": [sq.to_dict() for sq in self.subqueries],
            "dependency_graph": self.dependency_graph,
            "degraded": self.degraded,
        }


def fallback_plan(query: str, t: int | None) -> QueryPlan:
    return QueryPlan(query, [SubQuery("q1", query, "MIXED", "local", hint_time=resolve_hint(query, t))], degraded=True)


def _interval(raw: Any) -> TimeInterval | None:
    if raw is None:
        return None
    try:
        iv = TimeInterval.from_list(raw)
    except (TypeError, ValueError):
        return None
    return iv if iv.start > 0 else None


def parse_plan(data: Any, query: str, t: int | None) -> QueryPlan:
    """Validate model output and apply the deterministic post-rules."""
    if not isinstance(data, dict) or not isinstance(data.get("subqueries"), list):
        raise PlanValidationError("missing subqueries list")
    raw = data["subqueries"]
    if not 1 <= len(raw) <= MAX_SUBQUERIES:
        raise PlanValidationError(f"plan has {len(raw)} sub-queries; expected 1-{MAX_SUBQUERIES}")
    subs: list[SubQuery] = []
    for item in raw:
        if not isinstance(item, dict):
            raise PlanValidationError("sub-query is not an object")
        sid, text = item.get("id"), item.get("text")
        if not isinstance(sid, str) or not re.fullmatch(r"q\d+", sid):
            raise PlanValidationError(f"bad sub-query id {sid!r}")
        if not isinstance(text, str) or not text.strip():
            raise PlanValidationError(f"{sid}: empty text")
        scope = item.get("memory_scope")
        if scope not in SCOPES:
            raise PlanValidationError(f"{sid}: memory_scope {scope!r} not in {SCOPES}")
        cov = item.get("coverage_mode")
        if cov not in COVERAGE:
            raise PlanValidationError(f"{sid}: coverage_mode {cov!r} not in {COVERAGE}")
        deps = item.get("deps") or []
        graph = data.get("dependency_graph") or {}
        if isinstance(graph, dict) and isinstance(graph.get(sid), list):
            deps = list(dict.fromkeys(list(deps) + list(graph[sid])))
        if not isinstance(deps, list) or not all(isinstance(d, str) for d in deps):
            raise PlanValidationError(f"{sid}: deps must be a list of ids")
        th = item.get("type_hint")
        # Deterministic date parsing wins over whatever the model put in hint_time.
        hint = resolve_hint(text, t) or _interval(item.get("hint_time")) or resolve_hint(query, t)
        if COUNTING.search(text) or COUNTING.search(query):
            cov = "global"
        subs.append(SubQuery(sid, text, scope, cov, str(th) if th else None, deps, hint))
    ids = [s.id for s in subs]
    if len(set(ids)) != len(ids):
        raise PlanValidationError("duplicate sub-query ids")
    for s in subs:
        for d in s.deps:
            if d not in ids or d == s.id:
                raise PlanValidationError(f"{s.id}: unknown or self dependency {d!r}")
    if len(subs) == 1 and subs[0].text != query:
        raise PlanValidationError("single sub-query must repeat the query verbatim")
    plan = QueryPlan(query, subs)
    plan.order()
    return plan


def plan_query(
    provider: Provider,
    query: str,
    t: int | None = None,
    catalog: PromptCatalog | None = None,
) -> QueryPlan:
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    catalog = catalog or DEFAULT_CATALOG
    payload = catalog.render("planner", QUERY_TEXT=query)
    inputs = {"query": query, "query_time": t}
    note = ""
    for attempt in range(2):
        req = ChatRequest(
            system_prompt="",
            user_payload=payload + note,
            task="planner",
            stage="retrieve",
            inputs={**inputs, "attempt": attempt},
        )
        try:
            data = provider.chat(req).data
        except ProviderError as exc:
            logger.warning("planner call failed (%s); single sub-query fallback", exc)
            return fallback_plan(query, t)
        try:
            return parse_plan(data, query, t)
        except PlanValidationError as exc:
            logger.info("plan rejected: %s", exc)
            note = f"\n\nYour previous plan was invalid ({exc}). Output a corrected plan."
    return fallback_plan(query, t)
