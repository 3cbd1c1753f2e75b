"""Command-line interface: ingest, query, inspect, stats, eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import PROVENANCE, EngineConfig
from .core import ValidationError, parse_timestamp
from .store import MemoryStore, StoreError, iter_jsonl


def _defaults_epilog() -> str:
    lines = ["configuration defaults (override with --config FILE.json):"]

    def walk(prefix, d):
        for k, v in d.items():
            if isinstance(v, dict):
                walk(f"{prefix}{k}.", v)
            else:
                lines.append(f"  {prefix}{k} = {json.dumps(v)}")

    walk("", EngineConfig().to_dict())
    lines.append("")
    lines.append("where the defaults come from:")
    for k, v in PROVENANCE.items():
        lines.append(f"  {k}: {v}")
    lines.append("")
    lines.append("API keys are read only from the environment variable named by provider.api_key_env_var.")
    return "\n".join(lines)


def _config(args) -> EngineConfig | None:
    cfg = EngineConfig.load(args.config) if args.config else None
    if args.mode:
        cfg = cfg or EngineConfig()
        cfg = replace(cfg, provider=replace(cfg.provider, mode=args.mode))
    return cfg


def _open_store(path: str, cfg: EngineConfig | None, create: bool = False) -> MemoryStore:
    root = Path(path)
    if (root / "manifest.json").exists():
        store = MemoryStore.load(root)
        if cfg is not None:
            # Only the provider section may change for an existing store.
            store.config = replace(store.config, provider=cfg.provider)
        return store
    if not create:
        raise StoreError(f"{root}: no store found (run ingest first)")
    return MemoryStore(cfg or EngineConfig())


def _engine(store: MemoryStore):
    from .engine import MemoryEngine

    return MemoryEngine(store.config, store=store)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


def cmd_ingest(args) -> int:
    store = _open_store(args.store, _config(args), create=True)
    eng = _engine(store)
    report = eng.ingest(iter_jsonl(args.jsonl), args.conversation)
    manifest = store.save(args.store)
    _emit({"ingest": report.to_dict(), "stats": manifest["counts"], "fingerprint": manifest["fingerprint"]})
    return 0


def cmd_query(args) -> int:
    store = _open_store(args.store, _config(args))
    eng = _engine(store)
    t = parse_timestamp(args.time, "--time") if args.time is not None else None
    res = eng.query(args.text, t=t, k=args.k, scope=args.scope)
    print(res.to_json())
    return 0


def cmd_inspect(args) -> int:
    store = _open_store(args.store, None)
    if args.what == "tree":
        if args.id:
            node = store.tree.nodes.get(args.id)
            if node is None:
                raise KeyError(f"no tree node {args.id}")
            _emit(node.to_dict())
        else:
            print(store.tree.dumps())
    elif args.what == "graph":
        if args.id:
            ent = store.graph.entities.get(args.id)
            if ent is None:
                raise KeyError(f"no entity {args.id}")
            edges = [e.to_dict() for e in store.graph.edges.values() if args.id in (e.head, e.tail)]
            _emit({"entity": ent.to_dict(), "edges": edges})
        else:
            print(store.graph.dumps())
    else:
        if not args.id:
            raise KeyError("inspect event needs an event id")
        ev = store.events.get(args.id)
        if ev is None:
            raise KeyError(f"no event {args.id}")
        leaf = store.tree.leaf_of.get(ev.id)
        path = [store.tree.nodes[leaf].to_dict()] if leaf else []
        if leaf:
            path += [n.to_dict() for n in store.tree.ancestors(leaf)]
        _emit(
            {
                "event": ev.to_dict(),
                "fragments": [store.fragments[f].to_dict() for f in ev.frag_ids if f in store.fragments],
                "tree_path": path,
            }
        )
    return 0


def cmd_stats(args) -> int:
    store = _open_store(args.store, None)
    _emit(store.stats())
    return 0


def cmd_eval(args) -> int:
    from .evaluation import load_dataset, run_eval

    ds = load_dataset(None if args.dataset == "demo" else args.dataset)
    ks = [int(x) for x in args.sweep_k.split(",")] if args.sweep_k else None
    cfg = _config(args) or EngineConfig()
    root = Path(args.store_root)
    root.mkdir(parents=True, exist_ok=True)
    report = run_eval(ds, cfg, ks=ks, store_root=root, limit=args.limit)
    out = Path(args.output) if args.output else root / "eval_report.json"
    out.write_text(report.to_json(), encoding="utf-8")
    print(report.table())
    print(f"report: {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hybridmem",
        description="Conversational memory engine: consolidation tree + entity graph.",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--config", help="engine config JSON (default: built-in defaults)")
    p.add_argument("--mode", choices=["mock", "live"], help="provider mode (default: from config, mock)")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = p.add_subparsers(dest="command", required=True)

    # The global options are also accepted after the sub-command.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="engine config JSON")
    common.add_argument("--mode", choices=["mock", "live"], default=argparse.SUPPRESS, help="provider mode")
    fmt = argparse.ArgumentDefaultsHelpFormatter
    s = sub.add_parser("ingest", help="add JSONL fragments to a store", formatter_class=fmt, parents=[common])
    s.add_argument("jsonl")
    s.add_argument("--store", required=True)
    s.add_argument("--conversation", default="default", help="conversation id for records without one")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("query", help="answer a question from a store", formatter_class=fmt, parents=[common])
    s.add_argument("text")
    s.add_argument("--store", required=True)
    s.add_argument("--time", help="query time, epoch seconds or RFC 3339 (default: latest fragment)")
    s.add_argument("--k", type=int, default=None, help="evidence budget (default: retrieval.k = 10)")
    s.add_argument("--scope", choices=["short", "long", "mixed"], help="force one memory scope")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("inspect", help="dump the tree, graph, or one event", formatter_class=fmt, parents=[common])
    s.add_argument("what", choices=["tree", "graph", "event"])
    s.add_argument("id", nargs="?")
    s.add_argument("--store", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("stats", help="count table for a store", formatter_class=fmt, parents=[common])
    s.add_argument("--store", required=True)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("eval", help="run the QA evaluation harness", formatter_class=fmt, parents=[common])
    s.add_argument("dataset", help="dataset JSON path, or 'demo' for the bundled corpus")
    s.add_argument("--store-root", required=True)
    s.add_argument("--sweep-k", help="comma-separated k values, e.g. 5,10,20,30,50")
    s.add_argument("--limit", type=int, help="evaluate only the first N questions")
    s.add_argument("--output", help="report JSON path (default: STORE_ROOT/eval_report.json)")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (StoreError, ValidationError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
