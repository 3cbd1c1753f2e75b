import json

import pytest

from corpora import three_sessions

from hybridmem.cli import build_parser, main


@pytest.fixture
def jsonl(tmp_path):
    p = tmp_path / "conv.jsonl"
    p.write_text("".join(json.dumps(r) + "\n" for r in three_sessions()))
    return p


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_ingest_stats_query_inspect(tmp_path, jsonl, capsys):
    store = str(tmp_path / "store")
    code, out, _ = run(capsys, "ingest", str(jsonl), "--store", store)
    assert code == 0 and json.loads(out)["stats"]["fragments"] == 10
    code, out, _ = run(capsys, "stats", "--store", store)
    assert json.loads(out)["events"] == 10
    code, out, _ = run(capsys, "query", "What is the name of Caroline's cat?", "--store", store,
                       "--time", "2023-06-11T12:00:00Z", "--k", "10")
    res = json.loads(out)
    assert code == 0 and "Milo" in res["final_answer"]
    assert res["query_time"] == 1686484800
    code, out, _ = run(capsys, "inspect", "event", "e000001", "--store", store)
    d = json.loads(out)
    assert [n["level"] for n in d["tree_path"]] == [1, 2, 3, 4]
    code, out, _ = run(capsys, "inspect", "tree", "--store", store)
    assert len(json.loads(out)["nodes"]) > 10
    code, out, _ = run(capsys, "inspect", "graph", "ent000001", "--store", store)
    assert json.loads(out)["entity"]["id"] == "ent000001"


def test_reingest_is_idempotent(tmp_path, jsonl, capsys):
    store = str(tmp_path / "s")
    _, first, _ = run(capsys, "ingest", str(jsonl), "--store", store)
    _, second, _ = run(capsys, "ingest", str(jsonl), "--store", store)
    a, b = json.loads(first), json.loads(second)
    assert a["fingerprint"] == b["fingerprint"]
    assert b["ingest"]["fragments_skipped"] == 10


def test_errors_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "stats", "--store", str(tmp_path / "missing"))
    assert code == 2 and "no store" in err
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"speaker": "A", "timestamp": "yesterday", "text": "hi"}\n')
    code, _, err = run(capsys, "ingest", str(bad), "--store", str(tmp_path / "s"))
    assert code == 2 and "timestamp" in err


def test_eval_sweep(tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "demo", "--store-root", str(tmp_path), "--sweep-k", "5,30", "--mode", "mock")
    assert code == 0
    rep = json.loads((tmp_path / "eval_report.json").read_text())
    assert [r["k"] for r in rep["rows"]] == [5, 30]
    assert out.splitlines()[0].split()[:2] == ["k", "n"]


def test_help_lists_defaults():
    text = build_parser().format_help()
    assert "scoring.theta1 = 0.7" in text
    assert "tree.alphas" in text
