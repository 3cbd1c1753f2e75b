"""QA evaluation: answer simplification, token F1, LLM judge, reports."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import string
import tempfile
import time
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, NamedTuple, Sequence

from .config import EngineConfig
from .core import CostLedger, parse_timestamp
from .prompts import DEFAULT_CATALOG, PromptCatalog
from .providers import ChatRequest, Provider, ProviderError, make_provider
from .store import storage_bytes

logger = logging.getLogger(__name__)

ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = set(string.punctuation)


# ---------------------------------------------------------------------------
# Token metrics
# ---------------------------------------------------------------------------


def normalize(text: str, form: str = "NFKD") -> list[str]:
    """Unicode-normalize, lowercase, drop punctuation and articles, split on whitespace."""
    s = unicodedata.normalize(form, text).lower()
    s = "".join(" " if (ch in _PUNCT or unicodedata.category(ch).startswith("P")) else ch for ch in s)
    return [t for t in s.split() if t not in ARTICLES]


class F1Score(NamedTuple):
    precision: float
    recall: float
    f1: float


def token_f1(pred: str, gold: str, form: str = "NFKD") -> F1Score:
    p, g = normalize(pred, form), normalize(gold, form)
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return F1Score(0.0, 0.0, 0.0)
    precision = common / len(p)
    recall = common / len(g)
    return F1Score(precision, recall, 2 * precision * recall / (precision + recall))


# ---------------------------------------------------------------------------
# Model-backed steps
# ---------------------------------------------------------------------------


def simplify_answer(
    provider: Provider, question: str, generated: str, catalog: PromptCatalog | None = None
) -> tuple[str, bool]:
    """Shortest answer span for F1 scoring; returns (answer, fell_back)."""
    if not generated.strip():
        return generated, True
    catalog = catalog or DEFAULT_CATALOG
    req = ChatRequest(
        system_prompt="",
        user_payload=catalog.render("simplify", question=question, answer=generated),
        task="simplify",
        stage="judge",
        inputs={"question": question, "answer": generated},
    )
    try:
        data = provider.chat(req).data
        out = data["answer"]
        if not isinstance(out, str) or not out.strip():
            raise TypeError("empty answer")
        return out.strip(), False
    except (ProviderError, KeyError, TypeError) as exc:
        logger.info("simplifier output unusable (%s); keeping generated answer", exc)
        return generated, True


def judge(
    provider: Provider, question: str, gold: str, pred: str, catalog: PromptCatalog | None = None
) -> tuple[str, bool]:
    """``("CORRECT"|"WRONG", parse_failed)``; parse failures count as WRONG."""
    catalog = catalog or DEFAULT_CATALOG
    req = ChatRequest(
        system_prompt="",
        user_payload=catalog.render("judge", question=question, gold_answer=gold, generated_answer=pred),
        task="judge",
        stage="judge",
        inputs={"question": question, "gold_answer": gold, "generated_answer": pred},
    )
    try:
        data = provider.chat(req).data
        label = str(data["label"]).strip().upper()
    except (ProviderError, KeyError, TypeError) as exc:
        logger.info("judge output unusable (%s)", exc)
        return "WRONG", True
    if label not in ("CORRECT", "WRONG"):
        return "WRONG", True
    return label, False


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass
class QAItem:
    question: str
    gold_answer: str
    category: str = "uncategorized"
    conversation_id: str = "default"
    question_time: int | None = None

    def __post_init__(self):
        if not str(self.gold_answer).strip():
            raise ValueError("gold_answer must be non-empty")
        self.gold_answer = str(self.gold_answer)
        self.category = str(self.category)


@dataclass
class Dataset:
    name: str
    conversations: dict[str, list[dict]]
    questions: list[QAItem]


def load_dataset(path: str | Path | None = None) -> Dataset:
    """Read the neutral JSON format; ``None`` loads the bundled demo dataset."""
    if path is None:
        from importlib import resources

        raw = json.loads(resources.files("hybridmem").joinpath("data/demo_dataset.json").read_text("utf-8"))
        name = "demo"
    else:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        name = Path(path).stem
    if "conversations" not in raw and isinstance(raw, list):
        return load_locomo(raw, name)
    convs = {}
    for c in raw["conversations"]:
        convs[str(c["id"])] = [dict(f, conversation_id=str(c["id"])) for f in c["fragments"]]
    qs = []
    for q in raw["questions"]:
        qt = q.get("question_time")
        qs.append(
            QAItem(
                question=q["question"],
                gold_answer=q["gold_answer"],
                category=q.get("category", "uncategorized"),
                conversation_id=str(q.get("conversation_id", "default")),
                question_time=parse_timestamp(qt, "question_time") if qt is not None else None,
            )
        )
    return Dataset(raw.get("name", name), convs, qs)


LOCOMO_CATEGORIES = {1: "multi-hop", 2: "temporal", 3: "open-domain", 4: "single-hop", 5: "adversarial"}


def _locomo_time(s: str) -> int:
    dt = datetime.strptime(s.strip(), "%I:%M %p on %d %B, %Y").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def load_locomo(raw: Sequence[Mapping[str, Any]], name: str = "locomo") -> Dataset:
    """Adapter for LoCoMo-style exports (a list of samples with sessions and QA)."""
    convs: dict[str, list[dict]] = {}
    qs: list[QAItem] = []
    for sample in raw:
        cid = str(sample.get("sample_id", len(convs)))
        conv = sample["conversation"]
        frags = []
        n = 1
        while f"session_{n}" in conv:
            base = _locomo_time(conv[f"session_{n}_date_time"])
            for i, turn in enumerate(conv[f"session_{n}"]):
                frags.append(
                    {
                        "conversation_id": cid,
                        "speaker": turn["speaker"],
                        # One second per turn keeps within-session order.
                        "timestamp": base + i,
                        "text": turn["text"],
                        "meta": {"session": n, "dia_id": turn.get("dia_id")},
                    }
                )
            n += 1
        convs[cid] = frags
        for q in sample.get("qa", []):
            gold = q.get("answer")
            if gold is None or not str(gold).strip():
                continue
            cat = q.get("category")
            qs.append(QAItem(q["question"], str(gold), LOCOMO_CATEGORIES.get(cat, str(cat)), cid))
    return Dataset(name, convs, qs)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class ItemResult:
    question: str
    category: str
    gold: str
    prediction: str
    simplified: str
    f1: float
    label: str
    judge_parse_failure: bool
    simplify_fallback: bool
    pool_size: int
    followup_rounds: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _aggregate(items: Sequence[ItemResult]) -> dict:
    n = len(items)
    if n == 0:
        return {"n": 0, "f1": 0.0, "accuracy": 0.0}
    return {
        "n": n,
        "f1": round(sum(i.f1 for i in items) / n, 6),
        "accuracy": round(sum(i.label == "CORRECT" for i in items) / n, 6),
    }


@dataclass
class EvalRow:
    k: int
    items: list[ItemResult]
    skipped: int
    retrieval_tokens: int
    stage_totals: dict
    retrieval_ms: float = 0.0

    @property
    def candidate_pool(self) -> int:
        return sum(i.pool_size for i in self.items)

    def summary(self) -> dict:
        cats: dict[str, list[ItemResult]] = {}
        for it in self.items:
            cats.setdefault(it.category, []).append(it)
        return {
            "k": self.k,
            "overall": _aggregate(self.items),
            "categories": {c: _aggregate(v) for c, v in sorted(cats.items())},
            "skipped": self.skipped,
            "judge_parse_failures": sum(i.judge_parse_failure for i in self.items),
            "simplify_fallbacks": sum(i.simplify_fallback for i in self.items),
            "candidate_pool": self.candidate_pool,
            "followup_rounds": sum(i.followup_rounds for i in self.items),
            "retrieval_tokens": self.retrieval_tokens,
            "stage_totals": self.stage_totals,
            "items": [i.to_dict() for i in self.items],
        }


@dataclass
class EvalReport:
    dataset: str
    metadata: dict
    rows: list[EvalRow]
    indexing: dict
    timing: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "dataset": self.dataset,
            "metadata": self.metadata,
            "indexing": self.indexing,
            "rows": [r.summary() for r in self.rows],
        }
        if include_timing:
            d["timing"] = self.timing
        return d

    def canonical_json(self) -> str:
        """Timing-free JSON; byte-identical across mock runs."""
        return json.dumps(self.to_dict(include_timing=False), sort_keys=True, ensure_ascii=False, indent=2)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)

    def table(self) -> str:
        cats = sorted({c for r in self.rows for c in r.summary()["categories"]})
        header = ["k", "n", "F1", "Acc"] + [f"{c} F1/Acc" for c in cats] + ["pool", "ret_tokens"]
        lines = [header]
        for r in self.rows:
            s = r.summary()
            row = [str(r.k), str(s["overall"]["n"]), f"{s['overall']['f1']:.4f}", f"{s['overall']['accuracy']:.4f}"]
            for c in cats:
                a = s["categories"].get(c)
                row.append(f"{a['f1']:.3f}/{a['accuracy']:.3f}" if a else "-")
            row += [str(s["candidate_pool"]), str(s["retrieval_tokens"])]
            lines.append(row)
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        out = ["  ".join(cell.rjust(w) for cell, w in zip(line, widths)) for line in lines]
        ix = self.indexing
        out.append(
            f"indexing: {ix['fragments']} fragments, {ix['indexing_tokens']} tokens, "
            f"{ix['index_storage_bytes']} bytes on disk"
        )
        return "\n".join(out)


def _ledger_since(ledger: CostLedger, start: int) -> CostLedger:
    out = CostLedger()
    for r in ledger.records[start:]:
        out.append(r)
    return out


def run_eval(
    dataset: Dataset,
    config: EngineConfig | None = None,
    mode: str | None = None,
    ks: Sequence[int] | None = None,
    store_root: str | Path | None = None,
    provider_factory: Callable[[EngineConfig, CostLedger], Provider] | None = None,
    limit: int | None = None,
) -> EvalReport:
    """Index every referenced conversation once, then answer every question for each k."""
    from .engine import MemoryEngine

    config = config or EngineConfig()
    if mode is not None and mode != config.provider.mode:
        config = replace(config, provider=replace(config.provider, mode=mode))
    ks = list(ks or [config.retrieval.k])
    if any(k <= 0 for k in ks):
        raise ValueError("k values must be positive")
    factory = provider_factory or (lambda cfg, ledger: make_provider(cfg.provider, ledger))
    ledger = CostLedger()
    provider = factory(config, ledger)
    questions = dataset.questions[:limit] if limit else list(dataset.questions)
    needed = sorted({q.conversation_id for q in questions if q.conversation_id in dataset.conversations})

    tmp = None
    if store_root is None:
        tmp = tempfile.TemporaryDirectory()
        store_root = tmp.name
    root = Path(store_root)
    engines: dict[str, MemoryEngine] = {}
    t0 = time.perf_counter()
    index_start = len(ledger)
    n_frags = 0
    disk = 0
    for cid in needed:
        eng = MemoryEngine(config, provider=provider)
        eng.ingest(dataset.conversations[cid], cid)
        n_frags += len(eng.store.fragments)
        eng.store.save(root / _safe(cid))
        disk += storage_bytes(root / _safe(cid))
        engines[cid] = eng
    indexing_ms = (time.perf_counter() - t0) * 1000
    index_ledger = _ledger_since(ledger, index_start)
    indexing = {
        "conversations": len(needed),
        "fragments": n_frags,
        "indexing_tokens": index_ledger.tokens("index"),
        "index_storage_bytes": disk,
        "stage_totals": index_ledger.totals(include_timing=False),
        "store_fingerprints": {cid: engines[cid].store.fingerprint() for cid in needed},
    }

    rows = []
    timing = {"indexing_ms": round(indexing_ms, 3), "retrieval_ms_per_k": {}}
    for k in ks:
        start = len(ledger)
        items: list[ItemResult] = []
        skipped = 0
        query_ms = 0.0
        for q in questions:
            eng = engines.get(q.conversation_id)
            if eng is None:
                skipped += 1
                continue
            rounds_before = ledger.counters.get("followup_rounds", 0)
            q0 = time.perf_counter()
            res = eng.query(q.question, t=q.question_time, k=k)
            query_ms += (time.perf_counter() - q0) * 1000
            rounds = ledger.counters.get("followup_rounds", 0) - rounds_before
            short, fell_back = simplify_answer(provider, q.question, res.final_answer)
            label, parse_failed = judge(provider, q.question, q.gold_answer, res.final_answer)
            items.append(
                ItemResult(
                    question=q.question,
                    category=q.category,
                    gold=q.gold_answer,
                    prediction=res.final_answer,
                    simplified=short,
                    f1=round(token_f1(short, q.gold_answer).f1, 6),
                    label=label,
                    judge_parse_failure=parse_failed,
                    simplify_fallback=fell_back,
                    pool_size=sum(res.pool_sizes.values()),
                    followup_rounds=rounds,
                )
            )
        row_ledger = _ledger_since(ledger, start)
        row = EvalRow(
            k=k,
            items=items,
            skipped=skipped,
            retrieval_tokens=row_ledger.tokens("retrieve") + row_ledger.tokens("generate"),
            stage_totals=row_ledger.totals(include_timing=False),
        )
        n = max(1, len(items))
        timing["retrieval_ms_per_k"][str(k)] = round(query_ms / n, 3)
        rows.append(row)
    if tmp is not None:
        tmp.cleanup()
    metadata = {
        "config_hash": config.fingerprint(),
        "provider_mode": config.provider.mode,
        "seed": config.provider.seed,
        "ks": ks,
        "questions": len(questions),
        "ledger_totals": ledger.totals(include_timing=False),
    }
    return EvalReport(dataset.name, metadata, rows, indexing, timing)


def _safe(cid: str) -> str:
    s = re.sub(r"[^A-Za-z0-9_.-]", "_", cid)
    if s != cid:
        s += "-" + hashlib.sha256(cid.encode()).hexdigest()[:8]
    return s
