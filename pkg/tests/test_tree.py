import numpy as np
import pytest

from hybridmem.config import TreeConfig
from hybridmem.core import MemoryEvent, TimeInterval, window_of
from hybridmem.providers import MockProvider
from hybridmem.tree import TreeIndex, active_levels

DAY = 86400
T0 = 1683453600  # Sunday 2023-05-07 10:00 UTC
ALPHA = {2: 0.8, 3: 0.7, 4: 0.6}


class Ctx:
    """Minimal tree callbacks backed by a dict of events."""

    def __init__(self):
        self.events = {}
        self.summaries = {}
        self.consolidations = []
        self.reinforced = []

    def leaf_text(self, event_id):
        return self.events[event_id].event_text

    def consolidate(self, children):
        self.consolidations.append([c["id"] for c in children])
        return " | ".join(c["text"] for c in children), {"sources": [c["id"] for c in children]}

    def embed_summary(self, node_id, text):
        self.summaries[node_id] = text

    def reinforce(self, kind, item_id, ts):
        self.reinforced.append(item_id)
        ev = self.events[item_id]
        ev.n_m += 1
        ev.r_m = max(ev.r_m, ts)


def add(tree, ctx, eid, text, ts, active={1, 2, 3, 4}):
    ev = MemoryEvent(eid, text, ["f" + eid], TimeInterval.point(ts))
    ctx.events[eid] = ev
    vec = MockProvider().embed([text])[0]
    return tree.insert_event(ev, vec, set(active), ctx)


def cos(a, b):
    u, v = MockProvider().embed([a, b])
    return float(u @ v)


@pytest.mark.parametrize("age,levels", [(0, {1, 2}), (3, {1, 2}), (6.99, {1, 2}), (7, {1, 2, 3}),
                                        (10, {1, 2, 3}), (29.9, {1, 2, 3}), (30, {1, 2, 3, 4}), (400, {1, 2, 3, 4})])
def test_active_levels(age, levels):
    assert active_levels(age) == levels


def test_first_event_builds_single_child_chain():
    tree, ctx = TreeIndex(), Ctx()
    rep = add(tree, ctx, "e1", "Caroline painted a sunset", T0)
    assert tree.counts() == {1: 1, 2: 1, 3: 1, 4: 1}
    assert rep.consolidations_triggered == 0
    leaf = tree.nodes[tree.leaf_of["e1"]]
    for anc in tree.ancestors(leaf.id):
        assert anc.text == "Caroline painted a sunset"
        assert anc.meta.get("single_child")
    assert ctx.consolidations == []


def test_similar_same_day_events_share_parent():
    a = "Caroline painted a sunset at the beach"
    b = "Caroline painted a sunset at the beach again"
    assert cos(a, b) >= 0.8
    tree, ctx = TreeIndex(), Ctx()
    add(tree, ctx, "e1", a, T0, {1, 2})
    rep = add(tree, ctx, "e2", b, T0 + 60, {1, 2})
    l1, l2 = tree.nodes[tree.leaf_of["e1"]], tree.nodes[tree.leaf_of["e2"]]
    assert l1.parent_id == l2.parent_id
    parent = tree.nodes[l1.parent_id]
    assert parent.meta["sources"] == ["e1", "e2"]
    assert rep.consolidations_triggered == 1
    assert rep.decisions[-1].attached
    # both children reinforced once on the first merge, the parent once
    assert sorted(ctx.reinforced) == ["e1", "e2"]
    assert parent.n_m == 1 and parent.r_m == T0 + 60


def test_dissimilar_same_day_events_are_siblings():
    a, b = "Caroline painted a sunset", "Tim fixed his old bicycle tire"
    assert cos(a, b) < 0.8
    tree, ctx = TreeIndex(), Ctx()
    add(tree, ctx, "e1", a, T0, {1, 2})
    add(tree, ctx, "e2", b, T0 + 60, {1, 2})
    parents = tree.at_level(2)
    assert len(parents) == 2
    week = window_of(T0, "week")
    assert all(p.base_window == week for p in parents)


def test_enabling_a_level_adopts_orphans():
    tree, ctx = TreeIndex(), Ctx()
    add(tree, ctx, "e1", "Caroline painted a sunset", T0, {1, 2})
    assert tree.counts()[3] == 0
    add(tree, ctx, "e2", "Melanie went running", T0 + 8 * DAY, {1, 2, 3})
    assert all(n.parent_id for n in tree.at_level(2))


def test_regeneration_debounce_and_flush():
    tree, ctx = TreeIndex(TreeConfig(regen_every=2)), Ctx()
    text = "Caroline painted a sunset at the beach"
    add(tree, ctx, "e1", text, T0, {1, 2})
    add(tree, ctx, "e2", text + " again", T0 + 1, {1, 2})
    assert len(tree.at_level(2)) == 1
    stale = [n for n in tree.nodes.values() if n.meta.get("stale")]
    assert stale
    assert tree.flush(ctx) == len(stale)
    assert not any(n.meta.get("stale") for n in tree.nodes.values())


def make_scope_tree():
    tree, ctx = TreeIndex(), Ctx()
    add(tree, ctx, "e1", "Caroline painted a sunset at the beach", T0, {1, 2})
    add(tree, ctx, "e2", "Caroline painted a sunset at the beach again", T0 + 10, {1, 2})
    add(tree, ctx, "e3", "Tim fixed the bicycle", T0 + 20, {1, 2})
    assert len(tree.at_level(2)) == 2
    ftime = {f"fe{i}": T0 + 10 * (i - 1) for i in (1, 2, 3)}
    return tree, ctx.events, ftime


def test_scope_short():
    tree, events, ftime = make_scope_tree()
    got = tree.nodes_in_scope("SHORT", None, events, ftime)
    assert sorted(got["event"]) == ["e1", "e2", "e3"]
    assert sorted(got["fragment"]) == ["fe1", "fe2", "fe3"]
    assert got["summary"] == []


def test_scope_long():
    tree, events, ftime = make_scope_tree()
    got = tree.nodes_in_scope("LONG", None, events, ftime)
    assert len(got["event"]) == 3 and len(got["summary"]) == 2 and got["fragment"] == []


def test_scope_window_excluding_everything():
    tree, events, ftime = make_scope_tree()
    far = TimeInterval(T0 + 400 * DAY, T0 + 401 * DAY)
    got = tree.nodes_in_scope("MIXED", far, events, ftime)
    assert got == {"fragment": [], "event": [], "summary": []}
    with pytest.raises(ValueError):
        tree.nodes_in_scope("EVERYTHING", None, events, ftime)


# -- invariants over the 200-event synthetic corpus ---------------------------


def tree_violations(eng):
    tree, store = eng.store.tree, eng.store
    out = []
    for n in tree.nodes.values():
        for cid in n.child_ids:
            c = tree.nodes[cid]
            if c.parent_id != n.id or c.level != n.level - 1:
                out.append(("link", n.id, cid))
            if not n.window.covers(c.window) or not n.time_range.covers(c.time_range):
                out.append(("coverage", n.id, cid))
        if n.kind == "summary" and not n.child_ids:
            out.append(("empty", n.id))
    leaves = [n for n in tree.nodes.values() if n.kind == "leaf"]
    if sorted(n.event_id for n in leaves) != sorted(store.events):
        out.append(("bijection",))
    if len({n.event_id for n in leaves}) != len(leaves):
        out.append(("duplicate-leaf",))
    return out


def test_tree_coverage_and_bijection(corpus_engine):
    assert tree_violations(corpus_engine) == []
    assert len(corpus_engine.store.events) == 200


def test_threshold_soundness(corpus_engine):
    decisions = corpus_engine.decisions
    assert decisions and any(d.attached for d in decisions) and any(not d.attached for d in decisions)
    for d in decisions:
        assert d.alpha == ALPHA[d.level]
        best = max((s for _, s in d.candidates), default=-np.inf)
        if d.attached:
            assert best >= d.alpha
            assert dict(d.candidates)[d.chosen] == best
        else:
            assert best < d.alpha


def test_level_activation_rule(corpus_engine):
    store = corpus_engine.store
    t0 = min(f.timestamp for f in store.fragments.values())
    for ts, active, created in corpus_engine.activations:
        age = (ts - t0) / DAY
        oracle = {1, 2} if age < 7 else {1, 2, 3} if age < 30 else {1, 2, 3, 4}
        assert active == oracle
        assert created <= active
    # the corpus spans about 90 days, so everything below the top level has a parent
    for n in store.tree.nodes.values():
        if n.level < 4:
            assert n.parent_id is not None
