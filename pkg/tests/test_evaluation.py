from __future__ import annotations

import json
from pathlib import Path

import pytest

from lag.core import AblationFlags, TerminatorConfig
from lag.decompose import LoadConfig
from lag.errors import TransportError
from lag.evaluation import (
    EvalRecord,
    EvalReport,
    QAExample,
    compute_aggregates,
    contain_match,
    judge_match,
    load_dataset,
    render_table,
    run_eval,
    write_table,
)
from lag.providers import HashEmbedder, Role, scripted_provider

from .conftest import bundle

PAIRS = json.loads((Path(__file__).parent / "data" / "contain_pairs.json").read_text(encoding="utf-8"))


@pytest.mark.parametrize("pair", PAIRS, ids=[f"pair{i}" for i in range(len(PAIRS))])
def test_contain_match_hand_labels(pair):
    assert contain_match(pair["prediction"], pair["gold"]) is pair["label"]


def test_contain_match_aggregate_equals_hand_count():
    records = [EvalRecord(str(i), "q", p["gold"], p["prediction"], contain_match(p["prediction"], p["gold"]))
               for i, p in enumerate(PAIRS)]
    expected = sum(p["label"] for p in PAIRS) / len(PAIRS)
    assert abs(compute_aggregates(records)["contain_accuracy"] - expected) < 1e-12


def test_seven_of_ten():
    records = [EvalRecord(str(i), "q", "gold", "gold" if i < 7 else "other", i < 7) for i in range(10)]
    assert compute_aggregates(records)["contain_accuracy"] == pytest.approx(0.7, abs=1e-12)


@pytest.mark.parametrize("reply,match,warned", [("YES", True, False), ("no.", False, False), ("perhaps", False, True)])
def test_judge_replies(reply, match, warned):
    llm = scripted_provider({(Role.JUDGE_EQUIVALENCE, "*"): reply})
    v = judge_match("q?", "Paris", "paris", llm)
    assert v.match is match and (v.warning is not None) is warned


def test_judge_transport_error_propagates():
    class Down:
        def complete(self, spec):
            raise TransportError("down")

    with pytest.raises(TransportError):
        judge_match("q?", "a", "b", Down())


def test_example_rejects_empty_fields():
    with pytest.raises(ValueError):
        QAExample("x", "  ", "a")
    with pytest.raises(ValueError):
        QAExample("x", "q?", "")


def test_load_dataset_layouts(tmp_path):
    hotpot = [{"_id": "h1", "question": "q?", "answer": "a",
               "supporting_facts": [["T1", 0], ["T2", 1], ["T1", 2]]}]
    (tmp_path / "h.json").write_text(json.dumps(hotpot))
    assert load_dataset(tmp_path / "h.json")[0].gold_support_titles == ("T1", "T2")

    musique = {"id": "m1", "question": "q?", "answer": "a",
               "paragraphs": [{"title": "A", "is_supporting": True}, {"title": "B", "is_supporting": False}]}
    hf = {"id": "w1", "question": "q?", "answers": ["a"], "supporting_facts": {"title": ["X", "X"], "sent_id": [0, 1]}}
    (tmp_path / "m.jsonl").write_text(json.dumps(musique) + "\n\n" + json.dumps(hf) + "\n")
    rows = load_dataset(tmp_path / "m.jsonl")
    assert rows[0].gold_support_titles == ("A",) and rows[1].gold_support_titles == ("X",)
    assert rows[1].gold_answer == "a"

    (tmp_path / "bad.jsonl").write_text('{"question": "q?"}\n')
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "bad.jsonl")


def test_empty_dataset_rejected(label_chain_index):
    with pytest.raises(ValueError, match="empty dataset"):
        run_eval([], label_chain_index, scripted_provider({}), HashEmbedder())


def _label_chain_eval(label_chain_settings, label_chain_index, concurrency):
    dataset = load_dataset(bundle("label_chain") / "dataset.jsonl")
    return run_eval(dataset * 1, label_chain_index, label_chain_settings.build_llm(), label_chain_settings.build_embedder(),
                    label_chain_settings.terminator, label_chain_settings.load, concurrency=concurrency)


def test_run_eval_label_chain(label_chain_settings, label_chain_index):
    report = _label_chain_eval(label_chain_settings, label_chain_index, 2)
    assert report.aggregates["contain_accuracy"] == 1.0 and report.aggregates["judge_accuracy"] == 1.0
    assert report.records[0].steps_answered == 4 and report.records[0].retrievals == 4
    assert "elapsed_s" in report.metadata


def test_report_round_trip_and_tamper(tmp_path, label_chain_settings, label_chain_index):
    report = _label_chain_eval(label_chain_settings, label_chain_index, 1)
    report.save(tmp_path / "r.json")
    again = EvalReport.load(tmp_path / "r.json")
    assert again.to_json() == report.to_json()
    doc = json.loads((tmp_path / "r.json").read_text())
    doc["aggregates"]["contain_accuracy"] = 0.5
    with pytest.raises(ValueError, match="disagrees"):
        EvalReport.from_dict(doc)


def test_concurrency_does_not_change_output():
    # examples fed out of id order, answered with varying amounts of work
    from lag.index import CorpusDocument, ingest

    emb = HashEmbedder()
    index = ingest([CorpusDocument(f"d{i}", f"Doc {i}", f"Fact number {i} is {i * i}.") for i in range(6)], emb)
    llm = scripted_provider({
        (Role.ESTIMATE_DEPTH, "*"): "1",
        (Role.ANSWER_STEP, "*"): "ANSWER: 4\nASSESSMENT: ANSWERABLE\nCONSISTENCY: CONSISTENT",
        (Role.DRAFT, "*"): "FINAL: 4",
        (Role.VALIDATE_DRAFT, "*"): "CONSISTENT",
        (Role.JUDGE_EQUIVALENCE, "*"): "YES",
    })
    dataset = [QAExample(f"e{i:02d}", f"What is fact number {i}?", str(i * i)) for i in (5, 1, 3, 0, 2, 4, 9, 7)]
    a = run_eval(dataset, index, llm, emb, concurrency=1)
    b = run_eval(dataset, index, llm, emb, concurrency=8)
    assert a.to_json(wall_clock=False) == b.to_json(wall_clock=False)
    assert [r.id for r in a.records] == sorted(r.id for r in a.records)
    assert a.aggregates["contain_accuracy"] == pytest.approx(1 / 8)


def test_failed_example_is_recorded(label_chain_index):
    llm = scripted_provider({})
    dataset = [QAExample("x", "What is unknown here?", "a")]
    report = run_eval(dataset, label_chain_index, llm, HashEmbedder(), judge=False)
    assert report.aggregates["errors"] == 1 and "UnknownFixtureError" in report.records[0].error


def test_tables(tmp_path):
    def rep(label, flags, hits):
        recs = [EvalRecord(str(i), "q", "g", "p", i < hits, judge_match=i < hits) for i in range(4)]
        return EvalReport(label, flags, recs, compute_aggregates(recs))

    reports = [rep("retrieval only", AblationFlags.all_off(), 1), rep("+ decompose", AblationFlags(reorder=False, chain=False, terminator=False), 3)]
    text = render_table(reports)
    assert "25.0" in text and "75.0" in text and text.splitlines()[0].startswith("| method")
    write_table(reports, tmp_path / "t.tsv")
    rows = (tmp_path / "t.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["method", "Contain-Acc.", "GPT-Acc."]
    assert rows[2].split("\t") == ["+ decompose", "75.0", "75.0"]
