"""Temporal-semantic consolidation tree.

Level 1 holds one leaf per memory event. Every upper level groups nodes that
fall in the same calendar window (week, month, year by default) and whose
embedding is close enough to an existing parent's child-centroid. The
structure is a forest of top-level nodes; no global root is materialized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol

import numpy as np

from .config import LevelConfig, TreeConfig
from .core import MemoryEvent, TimeInterval, window_of

SCOPES = ("SHORT", "LONG", "MIXED")


def active_levels(history_age_days: float, max_level: int = 4) -> set[int]:
    """Levels allowed to exist for a memory history of the given age."""
    if history_age_days < 0:
        raise ValueError("history age must be non-negative")
    if history_age_days < 7:
        top = 2
    elif history_age_days < 30:
        top = 3
    else:
        top = 4
    return set(range(1, min(top, max_level) + 1))


@dataclass
class TreeNode:
    id: str
    level: int
    window: TimeInterval
    base_window: TimeInterval
    kind: str  # "leaf" | "summary"
    time_range: TimeInterval
    centroid: np.ndarray
    event_id: str | None = None
    text: str = ""
    meta: dict[str, Any] = field(default_factory=dict)
    child_ids: list[str] = field(default_factory=list)
    parent_id: str | None = None
    n_m: int = 0
    r_m: int = 0
    regen_at: int = 0

    @property
    def source_count(self) -> int:
        return len(self.child_ids) if self.kind == "summary" else 1

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "level": self.level,
            "kind": self.kind,
            "window": self.window.to_list(),
            "base_window": self.base_window.to_list(),
            "time_range": self.time_range.to_list(),
            "event_id": self.event_id,
            "text": self.text,
            "meta": self.meta,
            "child_ids": list(self.child_ids),
            "parent_id": self.parent_id,
            "source_count": self.source_count,
            "n_m": self.n_m,
            "r_m": self.r_m,
            "regen_at": self.regen_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], centroid: np.ndarray) -> "TreeNode":
        return cls(
            id=d["id"],
            level=int(d["level"]),
            kind=d["kind"],
            window=TimeInterval.from_list(d["window"]),
            base_window=TimeInterval.from_list(d["base_window"]),
            time_range=TimeInterval.from_list(d["time_range"]),
            centroid=centroid,
            event_id=d.get("event_id"),
            text=d.get("text", ""),
            meta=dict(d.get("meta") or {}),
            child_ids=list(d.get("child_ids") or []),
            parent_id=d.get("parent_id"),
            n_m=int(d.get("n_m", 0)),
            r_m=int(d.get("r_m", 0)),
            regen_at=int(d.get("regen_at", 0)),
        )


@dataclass
class PlacementDecision:
    node_id: str
    level: int
    window_start: int
    alpha: float
    candidates: list[tuple[str, float]]
    chosen: str
    attached: bool


@dataclass
class InsertionReport:
    created_node_ids: list[str] = field(default_factory=list)
    updated_parent_ids: list[str] = field(default_factory=list)
    consolidations_triggered: int = 0
    decisions: list[PlacementDecision] = field(default_factory=list)


class TreeContext(Protocol):
    """Services the tree needs from its owner."""

    def leaf_text(self, event_id: str) -> str: ...

    def consolidate(self, children: list[dict]) -> tuple[str, dict]: ...

    def embed_summary(self, node_id: str, text: str) -> None: ...

    def reinforce(self, kind: str, item_id: str, ts: int) -> None: ...


def _centroid(vectors: Iterable[np.ndarray]) -> np.ndarray:
    m = np.mean(np.stack(list(vectors)), axis=0)
    n = float(np.linalg.norm(m))
    return m / n if n > 0 else m


class TreeIndex:
    def __init__(self, config: TreeConfig | None = None):
        self.config = config or TreeConfig()
        self.levels: tuple[LevelConfig, ...] = self.config.levels
        self.regen_every = self.config.regen_every or 1
        self.nodes: dict[str, TreeNode] = {}
        self.leaf_of: dict[str, str] = {}
        self._by_window: dict[tuple[int, int], list[str]] = {}
        self._seq = 0

    # -- lookups ------------------------------------------------------------
    @property
    def max_level(self) -> int:
        return len(self.levels)

    def level_config(self, level: int) -> LevelConfig:
        return self.levels[level - 1]

    def at_level(self, level: int) -> list[TreeNode]:
        return [n for n in self.nodes.values() if n.level == level]

    def counts(self) -> dict[int, int]:
        out = {lv.level: 0 for lv in self.levels}
        for n in self.nodes.values():
            out[n.level] += 1
        return out

    def ancestors(self, node_id: str) -> list[TreeNode]:
        out = []
        cur = self.nodes[node_id].parent_id
        while cur is not None:
            node = self.nodes[cur]
            out.append(node)
            cur = node.parent_id
        return out

    def node_text(self, node: TreeNode, ctx: TreeContext) -> str:
        return ctx.leaf_text(node.event_id) if node.kind == "leaf" else node.text

    # -- construction -------------------------------------------------------
    def _new_id(self) -> str:
        self._seq += 1
        return f"n{self._seq:06d}"

    def _register(self, node: TreeNode) -> None:
        self.nodes[node.id] = node
        self._by_window.setdefault((node.level, node.base_window.start), []).append(node.id)

    def ensure_active(self, active: set[int], ctx: TreeContext, report: InsertionReport | None = None) -> None:
        """Give every parentless node a parent once the level above becomes active."""
        report = report or InsertionReport()
        for level in range(1, self.max_level):
            if level + 1 not in active:
                break
            orphans = [n for n in self.nodes.values() if n.level == level and n.parent_id is None]
            for node in sorted(orphans, key=lambda n: n.id):
                self._place(node, active, ctx, report)

    def insert_event(
        self,
        event: MemoryEvent,
        embedding: np.ndarray,
        active: set[int],
        ctx: TreeContext,
    ) -> InsertionReport:
        if embedding is None:
            raise ValueError(f"event {event.id} has no embedding")
        if event.id in self.leaf_of:
            raise ValueError(f"event {event.id} already has a leaf")
        report = InsertionReport()
        self.ensure_active(active, ctx, report)
        base = window_of(event.time_range.start, self.levels[0].window_unit)
        leaf = TreeNode(
            id=self._new_id(),
            level=1,
            window=base.hull(event.time_range),
            base_window=base,
            kind="leaf",
            time_range=event.time_range,
            centroid=np.asarray(embedding, dtype=np.float64),
            event_id=event.id,
        )
        self._register(leaf)
        self.leaf_of[event.id] = leaf.id
        report.created_node_ids.append(leaf.id)
        self._place(leaf, active, ctx, report)
        return report

    def _candidates(self, level: int, window: TimeInterval) -> list[TreeNode]:
        starts = [window.start]
        if self.config.adjacent_windows:
            unit = self.level_config(level).window_unit
            starts += [window_of(window.start - 1, unit).start, window.end + 1]
        ids = []
        for s in starts:
            ids.extend(self._by_window.get((level, s), []))
        return [self.nodes[i] for i in ids]

    def _place(self, node: TreeNode, active: set[int], ctx: TreeContext, report: InsertionReport) -> None:
        while node.level + 1 in active and node.level < self.max_level:
            up = node.level + 1
            cfg = self.level_config(up)
            target = window_of(node.base_window.start, cfg.window_unit)
            sims = [(c, float(np.dot(node.centroid, c.centroid))) for c in self._candidates(up, target)]
            best = None
            if sims:
                best = max(sims, key=lambda cs: (cs[1], cs[0].time_range.end, _neg_id(cs[0].id)))
            alpha = float(cfg.alpha)
            if best is not None and best[1] >= alpha:
                parent = best[0]
                report.decisions.append(
                    PlacementDecision(node.id, up, target.start, alpha, [(c.id, s) for c, s in sims], parent.id, True)
                )
                self._attach(node, parent, ctx, report)
                return
            parent = TreeNode(
                id=self._new_id(),
                level=up,
                window=target.hull(node.window),
                base_window=target,
                kind="summary",
                time_range=node.time_range,
                centroid=node.centroid.copy(),
                child_ids=[node.id],
                r_m=node.time_range.end,
            )
            node.parent_id = parent.id
            self._register(parent)
            report.decisions.append(
                PlacementDecision(node.id, up, target.start, alpha, [(c.id, s) for c, s in sims], parent.id, False)
            )
            report.created_node_ids.append(parent.id)
            self._regenerate(parent, ctx, force=True)
            node = parent

    def _attach(self, node: TreeNode, parent: TreeNode, ctx: TreeContext, report: InsertionReport) -> None:
        ts = node.time_range.end
        first_merge = len(parent.child_ids) == 1
        parent.child_ids.append(node.id)
        node.parent_id = parent.id
        report.consolidations_triggered += 1
        # One reinforcement per participant per merge.
        if first_merge:
            self._reinforce(self.nodes[parent.child_ids[0]], ctx, ts)
        self._reinforce(node, ctx, ts)
        parent.n_m += 1
        parent.r_m = max(parent.r_m, ts)
        cur: TreeNode | None = parent
        while cur is not None:
            self._refresh(cur)
            self._regenerate(cur, ctx)
            report.updated_parent_ids.append(cur.id)
            cur = self.nodes[cur.parent_id] if cur.parent_id else None

    def _reinforce(self, node: TreeNode, ctx: TreeContext, ts: int) -> None:
        if node.kind == "leaf":
            ctx.reinforce("event", node.event_id, ts)
        else:
            node.n_m += 1
            node.r_m = max(node.r_m, ts)

    def _refresh(self, node: TreeNode) -> None:
        kids = [self.nodes[c] for c in node.child_ids]
        node.centroid = _centroid(k.centroid for k in kids)
        win = node.base_window
        tr = kids[0].time_range
        for k in kids:
            win = win.hull(k.window)
            tr = tr.hull(k.time_range)
        node.window = win
        node.time_range = tr

    def _regenerate(self, node: TreeNode, ctx: TreeContext, force: bool = False) -> None:
        every = self.regen_every
        count = len(node.child_ids)
        if not force and count - node.regen_at < every:
            node.meta["stale"] = True
            return
        kids = [self.nodes[c] for c in node.child_ids]
        if len(kids) == 1:
            node.text = self.node_text(kids[0], ctx)
            node.meta = {"single_child": True}
        else:
            payload = [
                {
                    "id": k.event_id if k.kind == "leaf" else k.id,
                    "text": self.node_text(k, ctx),
                    "time_range": k.time_range.to_list(),
                }
                for k in kids
            ]
            node.text, node.meta = ctx.consolidate(payload)
        node.regen_at = count
        ctx.embed_summary(node.id, node.text)

    def flush(self, ctx: TreeContext) -> int:
        """Regenerate every summary left stale by the debounce policy."""
        stale = [n for n in self.nodes.values() if n.meta.get("stale")]
        for n in sorted(stale, key=lambda n: (n.level, n.id)):
            self._regenerate(n, ctx, force=True)
        return len(stale)

    # -- retrieval support --------------------------------------------------
    def nodes_in_scope(
        self,
        scope: str,
        window_filter: TimeInterval | None,
        events: Mapping[str, MemoryEvent],
        fragment_time: Mapping[str, int],
    ) -> dict[str, list[str]]:
        """Candidate ids per source kind for a memory scope.

        SHORT: events + their fragments; LONG: events + summaries; MIXED: all.
        """
        if scope not in SCOPES:
            raise ValueError(f"unknown scope {scope!r}")

        def keep(iv: TimeInterval) -> bool:
            return window_filter is None or iv.intersects(window_filter)

        out: dict[str, list[str]] = {"fragment": [], "event": [], "summary": []}
        frag_seen: set[str] = set()
        for node in self.nodes.values():
            if node.kind == "leaf":
                if keep(node.window):
                    out["event"].append(node.event_id)
                if scope in ("SHORT", "MIXED"):
                    for fid in events[node.event_id].frag_ids:
                        if fid in frag_seen:
                            continue
                        ts = fragment_time[fid]
                        if window_filter is None or window_filter.contains(ts):
                            frag_seen.add(fid)
                            out["fragment"].append(fid)
            elif scope in ("LONG", "MIXED") and keep(node.window):
                out["summary"].append(node.id)
        return out

    # -- export -------------------------------------------------------------
    def dump(self) -> dict:
        return {
            "levels": [
                {"level": lv.level, "window_unit": lv.window_unit, "alpha": lv.alpha} for lv in self.levels
            ],
            "nodes": [self.nodes[k].to_dict() for k in sorted(self.nodes)],
        }

    def dumps(self) -> str:
        return json.dumps(self.dump(), sort_keys=True, indent=2, ensure_ascii=False)

    def restore(self, rows: list[dict], centroids: Mapping[str, np.ndarray], seq: int) -> None:
        self.nodes.clear()
        self.leaf_of.clear()
        self._by_window.clear()
        for d in rows:
            node = TreeNode.from_dict(d, centroids[d["id"]])
            self._register(node)
            if node.kind == "leaf":
                self.leaf_of[node.event_id] = node.id
        self._seq = seq


def _neg_id(node_id: str) -> tuple:
    # max() picks the lowest id among ties on similarity and recency.
    return tuple(-ord(c) for c in node_id)
