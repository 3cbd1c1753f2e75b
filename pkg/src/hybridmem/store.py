"""In-memory hybrid index and its on-disk layout.

A saved store is one directory::

    manifest.json      format version, dimension, schedule, counts, fingerprint
    fragments.jsonl    one MemoryFragment per line
    events.jsonl       one MemoryEvent per line
    tree.jsonl         one TreeNode per line
    entities.jsonl     one EntityNode per line
    edges.jsonl        one RelationEdge per line
    vectors.keys       one vector key per line, in sidecar row order
    vectors.bin        uint32 dim header + row-major little-endian float64 rows
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import Counter
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .config import EngineConfig
from .core import MemoryEvent, MemoryFragment
from .graph import GraphIndex
from .tree import TreeIndex
from .vectors import VectorStore

FORMAT_VERSION = 1
SEGMENTS = ("fragments", "events", "tree", "entities", "edges")


class StoreError(RuntimeError):
    pass


class FormatVersionError(StoreError):
    pass


class DimensionMismatchError(StoreError):
    pass


class FingerprintMismatchError(StoreError):
    pass


class TruncatedSidecarError(StoreError):
    pass


def _line(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


class MemoryStore:
    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        self.fragments: dict[str, MemoryFragment] = {}
        self.events: dict[str, MemoryEvent] = {}
        self.event_by_norm: dict[str, str] = {}
        self.frag_events: dict[str, list[str]] = {}
        self.tree = TreeIndex(self.config.tree)
        self.graph = GraphIndex(self.config.graph)
        self.vectors = VectorStore(self.config.provider.embedding_dim)
        self.counters: Counter = Counter()
        self.event_seq = 0

    # -- accessors ----------------------------------------------------------
    def next_event_id(self) -> str:
        self.event_seq += 1
        return f"e{self.event_seq:06d}"

    @property
    def first_ts(self) -> int | None:
        return min((f.timestamp for f in self.fragments.values()), default=None)

    @property
    def last_ts(self) -> int | None:
        return max((f.timestamp for f in self.fragments.values()), default=None)

    def conversation_fragments(self, conversation_id: str) -> list[MemoryFragment]:
        return [f for f in self.fragments.values() if f.conversation_id == conversation_id]

    def fragment_time(self) -> dict[str, int]:
        return {k: f.timestamp for k, f in self.fragments.items()}

    def events_for_entity(self, eid: str) -> list[MemoryEvent]:
        ids: set[str] = set()
        for f in self.graph.entities[eid].fragment_links:
            ids.update(self.frag_events.get(f, ()))
        return [self.events[i] for i in sorted(ids)]

    @property
    def degraded(self) -> bool:
        return any(e.degraded for e in self.events.values()) or any(
            n.meta.get("degraded") for n in self.tree.nodes.values()
        )

    # -- statistics ---------------------------------------------------------
    def stats(self) -> dict:
        levels = self.tree.counts()
        return {
            "fragments": len(self.fragments),
            "events": len(self.events),
            "tree_nodes": {f"L{k}": v for k, v in sorted(levels.items())},
            "entities": len(self.graph.entities),
            "edges": sum(1 for e in self.graph.edges.values() if e.edge_kind == "semantic"),
            "overlap_edges": sum(1 for e in self.graph.edges.values() if e.edge_kind == "overlap"),
            "vectors": len(self.vectors),
        }

    # -- canonical serialization --------------------------------------------
    def segments(self) -> dict[str, list[str]]:
        return {
            "fragments": [_line(f.to_dict()) for f in self.fragments.values()],
            "events": [_line(self.events[k].to_dict()) for k in sorted(self.events)],
            "tree": [_line(self.tree.nodes[k].to_dict()) for k in sorted(self.tree.nodes)],
            "entities": [_line(d) for d in self.graph.dump()["entities"]],
            "edges": [_line(d) for d in self.graph.dump()["edges"]],
        }

    def _vector_rows(self) -> tuple[list[str], np.ndarray]:
        keys, mat = self.vectors.matrix()
        extra_keys = [f"centroid:{k}" for k in sorted(self.tree.nodes)]
        if extra_keys:
            cents = np.stack([self.tree.nodes[k].centroid for k in sorted(self.tree.nodes)])
            mat = np.vstack([mat, cents]) if len(keys) else cents
            keys = keys + extra_keys
        return keys, mat

    def _state(self) -> dict:
        return {
            "event_seq": self.event_seq,
            "node_seq": self.tree._seq,
            "entity_seq": self.graph._ent_seq,
            "edge_seq": self.graph._edge_seq,
            "counters": dict(sorted(self.counters.items())),
            "graph_warnings": dict(sorted(self.graph.warnings.items())),
        }

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, rows in self.segments().items():
            h.update(name.encode())
            for r in rows:
                h.update(r.encode("utf-8"))
                h.update(b"\n")
        keys, mat = self._vector_rows()
        h.update("\n".join(keys).encode("utf-8"))
        h.update(np.ascontiguousarray(mat, dtype="<f8").tobytes())
        h.update(_line(self._state()).encode())
        return h.hexdigest()

    def manifest(self) -> dict:
        cfg = self.config
        return {
            "format_version": FORMAT_VERSION,
            "embedding_dim": self.vectors.dim,
            "levels": [
                {"level": lv.level, "window_unit": lv.window_unit, "alpha": lv.alpha} for lv in self.tree.levels
            ],
            "scoring": EngineConfig(scoring=cfg.scoring).to_dict()["scoring"],
            "config": cfg.to_dict(),
            "counts": self.stats(),
            "state": self._state(),
            "fingerprint": self.fingerprint(),
        }

    def same_as(self, other: "MemoryStore") -> bool:
        return self.fingerprint() == other.fingerprint() and self.vectors.equals(other.vectors)

    # -- persistence --------------------------------------------------------
    def save(self, path: str | Path) -> dict:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        for name, rows in self.segments().items():
            (root / f"{name}.jsonl").write_text("".join(r + "\n" for r in rows), encoding="utf-8")
        keys, mat = self._vector_rows()
        (root / "vectors.keys").write_text("".join(k + "\n" for k in keys), encoding="utf-8")
        dim = self.vectors.dim or 0
        with open(root / "vectors.bin", "wb") as fh:
            fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())
        manifest = self.manifest()
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        return manifest

    @classmethod
    def load(cls, path: str | Path, expected_dim: int | None = None) -> "MemoryStore":
        root = Path(path)
        mpath = root / "manifest.json"
        if not mpath.exists():
            raise StoreError(f"{root}: no manifest.json")
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise FormatVersionError(
                f"{root}: format_version {manifest.get('format_version')} is not supported (expected {FORMAT_VERSION})"
            )
        dim = int(manifest["embedding_dim"] or 0)
        if expected_dim is not None and dim and dim != expected_dim:
            raise DimensionMismatchError(f"{root}: embedding_dim {dim} != configured {expected_dim}")
        store = cls(EngineConfig.from_dict(manifest["config"]))
        rows = {name: _read_jsonl(root / f"{name}.jsonl") for name in SEGMENTS}
        for d in rows["fragments"]:
            f = MemoryFragment.from_dict(d)
            store.fragments[f.id] = f
        for d in rows["events"]:
            e = MemoryEvent.from_dict(d)
            store.events[e.id] = e
            for fid in e.frag_ids:
                store.frag_events.setdefault(fid, []).append(e.id)
        store._rebuild_norm_index()

        keys = (root / "vectors.keys").read_text(encoding="utf-8").splitlines()
        mat = _read_sidecar(root / "vectors.bin", len(keys))
        store.vectors = VectorStore(dim or None)
        centroids = {}
        for k, row in zip(keys, mat):
            if k.startswith("centroid:"):
                centroids[k.split(":", 1)[1]] = row.copy()
            else:
                store.vectors._vecs[k] = row.copy()
        state = manifest["state"]
        store.tree.restore(rows["tree"], centroids, state["node_seq"])
        store.graph.restore(rows["entities"], rows["edges"], state["entity_seq"], state["edge_seq"])
        store.graph.warnings = Counter(state.get("graph_warnings", {}))
        store.event_seq = state["event_seq"]
        store.counters = Counter(state.get("counters", {}))
        got = store.fingerprint()
        if got != manifest["fingerprint"]:
            raise FingerprintMismatchError(f"{root}: content fingerprint {got[:12]} != manifest {manifest['fingerprint'][:12]}")
        return store

    def _rebuild_norm_index(self) -> None:
        from .text import normalize_text

        self.event_by_norm = {}
        for eid in sorted(self.events):
            self.event_by_norm.setdefault(normalize_text(self.events[eid].event_text), eid)


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        raise StoreError(f"missing segment {path.name}")
    out = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise StoreError(f"{path.name}:{i}: corrupt record") from exc
    return out


def _read_sidecar(path: Path, n_rows: int) -> np.ndarray:
    if not path.exists():
        raise TruncatedSidecarError(f"missing sidecar {path.name}")
    blob = path.read_bytes()
    if len(blob) < 4:
        raise TruncatedSidecarError(f"{path.name}: header truncated")
    (dim,) = struct.unpack("<I", blob[:4])
    expected = 4 + n_rows * dim * 8
    if len(blob) != expected:
        raise TruncatedSidecarError(
            f"{path.name}: {len(blob)} bytes, expected {expected} for {n_rows} rows of dim {dim}"
        )
    if n_rows == 0:
        return np.zeros((0, dim))
    return np.frombuffer(blob[4:], dtype="<f8").reshape(n_rows, dim).astype(np.float64)


def storage_bytes(path: str | Path) -> int:
    return sum(p.stat().st_size for p in Path(path).iterdir() if p.is_file())


def iter_jsonl(path: str | Path) -> Iterable[dict]:
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{i}: invalid JSON") from exc
