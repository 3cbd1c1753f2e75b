import json
import struct

import numpy as np
import pytest

from corpora import scripted_records, three_sessions

from hybridmem import MemoryEngine, MemoryStore
from hybridmem.store import (
    DimensionMismatchError,
    FingerprintMismatchError,
    FormatVersionError,
    StoreError,
    TruncatedSidecarError,
    storage_bytes,
)


def ingested(records):
    eng = MemoryEngine()
    eng.ingest(records)
    return eng


def test_empty_roundtrip(tmp_path):
    s = MemoryStore()
    s.save(tmp_path)
    t = MemoryStore.load(tmp_path)
    assert t.fingerprint() == s.fingerprint()
    assert t.stats() == {"fragments": 0, "events": 0, "tree_nodes": {"L1": 0, "L2": 0, "L3": 0, "L4": 0},
                         "entities": 0, "edges": 0, "overlap_edges": 0, "vectors": 0}


def test_ten_fragment_roundtrip(tmp_path):
    eng = ingested(scripted_records(10, days=20))
    eng.store.save(tmp_path)
    back = MemoryStore.load(tmp_path, expected_dim=eng.config.provider.embedding_dim)
    assert back.same_as(eng.store)
    assert back.tree.dumps() == eng.store.tree.dumps()
    assert back.graph.dumps() == eng.store.graph.dumps()
    assert storage_bytes(tmp_path) > 0


def test_loaded_store_keeps_ingesting(tmp_path):
    recs = three_sessions()
    whole = ingested(recs)
    part = ingested(recs[:4])
    part.store.save(tmp_path)
    resumed = MemoryEngine(store=MemoryStore.load(tmp_path))
    resumed.ingest(recs[4:])
    assert resumed.store.stats() == whole.store.stats()
    assert sorted(e.event_text for e in resumed.store.events.values()) == sorted(
        e.event_text for e in whole.store.events.values()
    )


def test_truncated_sidecar(tmp_path):
    ingested(three_sessions()).store.save(tmp_path)
    blob = (tmp_path / "vectors.bin").read_bytes()
    (dim,) = struct.unpack("<I", blob[:4])
    (tmp_path / "vectors.bin").write_bytes(blob[: len(blob) - dim * 8])
    with pytest.raises(TruncatedSidecarError, match="vectors.bin"):
        MemoryStore.load(tmp_path)


def test_version_mismatch(tmp_path):
    MemoryStore().save(tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["format_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(FormatVersionError):
        MemoryStore.load(tmp_path)


def test_dimension_mismatch(tmp_path):
    ingested(three_sessions()[:2]).store.save(tmp_path)
    with pytest.raises(DimensionMismatchError):
        MemoryStore.load(tmp_path, expected_dim=7)


def test_tampered_segment(tmp_path):
    ingested(three_sessions()[:3]).store.save(tmp_path)
    p = tmp_path / "events.jsonl"
    p.write_text(p.read_text().replace("Milo", "Otis"))
    with pytest.raises(FingerprintMismatchError):
        MemoryStore.load(tmp_path)


def test_corrupt_jsonl_and_missing(tmp_path):
    ingested(three_sessions()[:3]).store.save(tmp_path)
    (tmp_path / "edges.jsonl").write_text("{not json\n")
    with pytest.raises(StoreError, match="edges.jsonl"):
        MemoryStore.load(tmp_path)
    with pytest.raises(StoreError):
        MemoryStore.load(tmp_path / "nowhere")


def test_stats_match_recount(tmp_path):
    recs = [
        {"speaker": "Caroline", "timestamp": 1683453600, "text": "I adopted a cat. Its name is Milo."},
        {"speaker": "Tim", "timestamp": 1683453700, "text": "I play piano."},
    ]
    eng = ingested(recs)
    eng.store.save(tmp_path)
    lines = {n: len((tmp_path / f"{n}.jsonl").read_text().splitlines()) for n in ("fragments", "events", "tree", "entities")}
    stats = eng.store.stats()
    assert (stats["fragments"], stats["events"]) == (2, 3)
    assert lines["fragments"] == 2 and lines["events"] == 3
    assert sum(stats["tree_nodes"].values()) == lines["tree"]
    assert stats["entities"] == lines["entities"]
    edges = [json.loads(x) for x in (tmp_path / "edges.jsonl").read_text().splitlines()]
    assert stats["edges"] == sum(e["edge_kind"] == "semantic" for e in edges)
    keys = (tmp_path / "vectors.keys").read_text().splitlines()
    assert stats["vectors"] == sum(not k.startswith("centroid:") for k in keys)
    before = (eng.store.stats(), eng.store.fingerprint())
    rep = eng.ingest(recs)
    assert rep.fragments_skipped == 2
    assert (eng.store.stats(), eng.store.fingerprint()) == before


def test_sidecar_layout(tmp_path):
    eng = ingested(three_sessions()[:2])
    eng.store.save(tmp_path)
    blob = (tmp_path / "vectors.bin").read_bytes()
    keys = (tmp_path / "vectors.keys").read_text().splitlines()
    (dim,) = struct.unpack("<I", blob[:4])
    mat = np.frombuffer(blob[4:], dtype="<f8").reshape(len(keys), dim)
    assert np.array_equal(mat[keys.index("event:e000001")], eng.store.vectors.get("event:e000001"))
