import pytest

from corpora import three_sessions

from hybridmem import EngineConfig, MemoryEngine
from hybridmem.config import RetrievalConfig
from hybridmem.core import TimeInterval
from hybridmem.planning import SubQuery
from hybridmem.retrieval import INSUFFICIENT, EvidenceItem, Retriever, dedupe, rank_key
from hybridmem.scoring import combined_score, temporal_relevance

T = 1686484800  # 2023-06-11T12:00:00Z


@pytest.fixture(scope="module")
def engine():
    eng = MemoryEngine()
    eng.ingest(three_sessions())
    return eng


def item(kind, sid, text, F, end=100):
    return EvidenceItem(kind, sid, text, TimeInterval(end - 10, end), F, None, 0.0, F, [sid])


def test_seed_by_exact_name(engine):
    r = engine.retriever()
    (cid,) = engine.store.graph.lookup("Caroline")
    assert cid in r.locate_seed_entities(SubQuery("q1", "What did Caroline paint?"))


def test_seed_by_alias():
    from hybridmem.extraction import ExtractedEntity

    eng = MemoryEngine()
    eid, _ = eng.store.graph.resolve_entity(ExtractedEntity("Dr. John Smith", "person"), "f1")
    eng.store.graph.resolve_entity(ExtractedEntity("john smith", "person"), "f2")
    seeds = eng.retriever().locate_seed_entities(SubQuery("q1", "Where does john smith work?"))
    assert seeds == [eid]


def test_no_seeds_below_threshold(engine):
    r = engine.retriever()
    sq = SubQuery("q1", "zebra quantum xylophone")
    q = r._qvec(sq.text)
    sims = [float(engine.store.vectors.get(f"entity:{e}") @ q) for e in engine.store.graph.entities]
    assert max(sims) < 0.5
    assert r.locate_seed_entities(sq) == []


def test_k1_single_event():
    eng = MemoryEngine()
    eng.ingest([{"speaker": "Caroline", "timestamp": T - 100, "text": "I adopted a cat named Milo."}])
    chain, pool = eng.retriever().gather_and_rank(SubQuery("q1", "cat named Milo", "LONG"), [], T, 1)
    assert [i.id for i in chain] == ["event:e000001"]


def test_dedupe_by_id_and_text():
    a = item("event", "e1", "Milo is a cat", 0.5)
    b = item("event", "e1", "Milo is a cat", 0.7)
    c = item("fragment", "f1", "Milo is a cat!", 0.9)
    d = item("summary", "n1", "something else", 0.1)
    out = dedupe([a, b, c, d])
    assert [i.id for i in out] == ["event:e1", "summary:n1"]
    assert out[0].F == 0.7


def test_hinted_candidate_ranks_first():
    hint = TimeInterval(1000, 2000)
    inside, outside = TimeInterval(1200, 1300), TimeInterval(90000, 90100)
    t_in, t_out = temporal_relevance(inside, hint), temporal_relevance(outside, hint)
    assert t_in > t_out
    S, R = 0.6, 0.8
    # hand values: 0.7*0.6 + 0.15*T + 0.15*0.8
    f_in = 0.42 + 0.15 * t_in + 0.12
    f_out = 0.42 + 0.15 * t_out + 0.12
    assert combined_score(S, t_in, R) == pytest.approx(f_in)
    a = EvidenceItem("event", "e2", "x", inside, S, t_in, R, combined_score(S, t_in, R), [])
    b = EvidenceItem("event", "e1", "y", outside, S, t_out, R, combined_score(S, t_out, R), [])
    assert sorted([b, a], key=rank_key)[0] is a


def test_scope_soundness(engine):
    r = engine.retriever()
    for scope, allowed in (("SHORT", {"event", "fragment"}), ("LONG", {"event", "summary"})):
        chain, _ = r.gather_and_rank(SubQuery("q1", "Caroline painted a sunset", scope), [], T, 30)
        assert chain and {i.source_kind for i in chain} <= allowed


def test_global_doubles_pool(engine):
    r = engine.retriever()
    _, local = r.gather_and_rank(SubQuery("q1", "painted", "SHORT", "local"), [], T, 3)
    _, glob = r.gather_and_rank(SubQuery("q1", "painted", "SHORT", "global"), [], T, 3)
    assert (local, glob) == (3, 6)


def ev(text, i=1):
    return item("event", f"e{i}", text, 0.5)


def test_reasoner_sufficient_and_missing(engine):
    r = engine.retriever()
    sq = SubQuery("q1", "What is the name of Caroline's cat?")
    ok = r.answer_subquery(sq, [ev("Caroline adopted a cat named Milo.")], {})
    assert not ok.missing_info and "Milo" in ok.answer_text
    airline = SubQuery("q1", "Which airline did Tim fly with?")
    bad = r.answer_subquery(airline, [ev("Tim flew a red-eye to Tokyo.")], {})
    assert bad.missing_info


def test_empty_chain_is_missing_without_a_call(engine):
    r = engine.retriever()
    n = len(engine.ledger)
    ans = r.answer_subquery(SubQuery("q1", "anything"), [], {})
    assert ans.missing_info and len(engine.ledger) == n


def test_follow_up_validation(engine):
    r = engine.retriever()
    sq = SubQuery("q1", "Which composer wrote the theme Tim plays?")
    chain = [ev("Tim enjoys playing a theme from his favorite movie on the piano.")]
    assert not r.follow_up_is_valid("which composer wrote the theme tim plays", sq, chain)
    assert not r.follow_up_is_valid("What is the weather?", sq, chain)
    assert r.follow_up_is_valid("What is the favorite movie that Tim mentioned?", sq, chain)


def test_bridge_follow_up_runs_once(engine):
    before = engine.ledger.counters.get("followup_rounds", 0)
    res = engine.query("Which composer wrote the theme that Tim enjoys playing on the piano?", t=T)
    (a,) = res.sub_answers
    assert a.missing_info and a.resolved
    assert a.follow_up == "What is the favorite movie that Tim mentioned?"
    assert "John Williams" in res.final_answer
    assert engine.ledger.counters["followup_rounds"] - before == 1
    assert "q1" in res.followup_pool_sizes


def test_rejected_follow_up_stops(engine):
    eng = MemoryEngine(provider=None)
    eng.ingest(three_sessions())
    eng.provider.overrides["missing_info"] = lambda i: {"missing_info_query": i["subquery"]}
    res = eng.query("Which composer wrote the theme that Tim enjoys playing on the piano?", t=T)
    assert res.sub_answers[0].follow_up is None
    assert eng.ledger.counters["followup_rejected"] == 2
    assert "followup_rounds" not in eng.ledger.counters


def test_intersection_answer(engine):
    res = engine.query("What subject have Caroline and Melanie both painted?", t=T)
    assert res.final_answer == "sunset"
    assert len(res.sub_answers) == 2


def test_single_subquery_passthrough(engine):
    res = engine.query("What is the name of Caroline's cat?", t=T)
    assert res.final_answer == res.sub_answers[0].answer_text


def test_all_empty_gives_insufficient():
    eng = MemoryEngine()
    eng.ingest([{"speaker": "A", "timestamp": T - 5, "text": "hello there"}])
    eng.provider.overrides["reasoner"] = lambda i: {"conclusions": "", "missing_info": True}
    res = eng.query("What is the capital of Mars?", t=T)
    assert res.final_answer == INSUFFICIENT


def test_flags_disable_sources(engine):
    cfg = EngineConfig(retrieval=RetrievalConfig(use_tree=False, use_graph=False))
    r = Retriever(engine.store, engine.provider, engine.catalog, cfg)
    chain, _ = r.gather_and_rank(SubQuery("q1", "Caroline painted", "LONG"), ["ent000001"], T, 20)
    assert {i.source_kind for i in chain} == {"event"}


def test_query_costs_match_records():
    eng = MemoryEngine()
    eng.ingest(three_sessions())
    start = len(eng.ledger)
    res = eng.query("What is the name of Caroline's cat?", t=T)
    recs = eng.ledger.records[start:]
    for stage, tot in res.costs.items():
        mine = [r for r in recs if r.stage == stage]
        assert tot["prompt_tokens"] == sum(r.prompt_tokens for r in mine)
        assert tot["completion_tokens"] == sum(r.completion_tokens for r in mine)
    assert res.costs["index"]["records"] == 0
