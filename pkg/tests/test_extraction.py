import pytest

from hybridmem.core import make_fragment
from hybridmem.extraction import ENTITY_TYPES, ExtractedEntity, Extractor, normalize_entity_type
from hybridmem.providers import MockProvider


def frag(text, speaker="Caroline", ts=1683453600):
    return make_fragment({"speaker": speaker, "timestamp": ts, "text": text})


def test_events_keep_named_entity():
    f = frag("I adopted a cat named Milo.")
    events = Extractor(MockProvider()).extract_events(f)
    assert events and any("Milo" in e.event_text for e in events)
    assert all(e.event_type in {"fact", "episodic"} for e in events)
    assert all(e.frag_ids == [f.id] for e in events)


def test_empty_model_output_is_empty_list():
    ex = Extractor(MockProvider(overrides={"extraction": lambda i: {"events": []}}))
    assert ex.extract_events(frag("Hello there.")) == []
    assert not ex.warnings


def test_invalid_json_twice_falls_back_to_sentences():
    ex = Extractor(MockProvider(overrides={"extraction": lambda i: "not json at all"}))
    events = ex.extract_events(frag("I went hiking. Then I slept."))
    assert [e.event_text for e in events] == ["Caroline went hiking.", "Then Caroline slept."]
    assert all(e.degraded for e in events)
    assert ex.warnings["extraction_fallback"] == 1


def test_bad_fields_are_repaired():
    def handler(inputs):
        fid = inputs["target_frag_id"]
        return {"events": [
            {"event_text": "x happened", "frag_ids": ["bogus"], "time_range": "soon", "event_type": "weird"},
            {"event_text": "   "},
            "junk",
        ]}

    ex = Extractor(MockProvider(overrides={"extraction": handler}))
    f = frag("whatever")
    (e,) = ex.extract_events(f)
    assert e.frag_ids == [f.id] and e.event_type == "other" and e.time_range.start == f.timestamp
    assert ex.warnings["malformed_event"] == 1 and ex.warnings["empty_event"] == 1


def test_entities_and_relation_for_painting():
    f = frag("Caroline painted a sunset.", speaker="")
    ents, rels, degraded = Extractor(MockProvider()).extract_entities_relations(f)
    names = {e.surface_name: e.entity_type for e in ents}
    assert names.get("Caroline") in {"person", "other"}
    assert any(r.source == "Caroline" and r.label in {"painted", "related_to"} and "sunset" in r.target.lower()
               for r in rels)
    assert not degraded


def test_lowercase_fragment_has_no_relations():
    ents, rels, _ = Extractor(MockProvider()).extract_entities_relations(frag("nothing to see here.", speaker=""))
    assert rels == []


def test_self_relation_dropped():
    out = {"entities": [{"surface_name": "Tim", "entity_type": "person"}],
           "relations": [{"source": "Tim", "target": "tim", "label": "is"},
                         {"source": "Tim", "target": "Nobody", "label": "knows"}]}
    ex = Extractor(MockProvider(overrides={"entities": lambda i: out}))
    ents, rels, _ = ex.extract_entities_relations(frag("Tim."))
    assert len(ents) == 1 and rels == []
    assert ex.warnings["self_relation"] == 1 and ex.warnings["dangling_relation"] == 1


def test_entity_type_folding():
    assert normalize_entity_type("ORG") == "organization"
    assert normalize_entity_type("spaceship") == "other"
    assert set(map(normalize_entity_type, ENTITY_TYPES)) == set(ENTITY_TYPES)
    with pytest.raises(ValueError):
        ExtractedEntity("  ...  ")


def children(*texts):
    return [{"id": f"e{i}", "text": t, "time_range": [100 + i, 100 + i]} for i, t in enumerate(texts, 1)]


def test_two_children_merge_with_both_sources():
    res = Extractor(MockProvider()).consolidate_payloads(children("likes sunsets", "painted a sunset"))
    assert len(res.items) == 1
    assert res.items[0].source_event_ids == ["e1", "e2"]
    assert res.unmerged_ids == []


def test_one_child_is_never_merged():
    res = Extractor(MockProvider()).consolidate_payloads(children("likes sunsets"))
    assert res.items == [] and res.unmerged_ids == ["e1"]


def test_contradiction_recorded():
    res = Extractor(MockProvider()).consolidate_payloads(children("Tim lives in Paris", "Tim lives in Rome"))
    item = res.items[0]
    assert item.conflicts or item.stability == "conflicting"


def test_undersourced_items_rejected():
    bad = {"consolidated_events": [{"consolidated_text": "merged", "source_event_ids": ["e1", "zzz"]}]}
    ex = Extractor(MockProvider(overrides={"consolidation": lambda i: bad}))
    res = ex.consolidate_payloads(children("a b", "c d"))
    assert res.items == [] and res.unmerged_ids == ["e1", "e2"]
    text, meta = ex.summary_text(children("a b", "c d"))
    assert text == "a b c d"
