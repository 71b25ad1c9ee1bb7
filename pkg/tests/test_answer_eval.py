import json
import random
from pathlib import Path

import pytest

from stubs import ScriptedTransport
from semmap_bench.answer_eval import (AccuracyTable, AnsweredBy, AnswerSettings, JudgeMethod,
                                      SystemAnswer, Verdict, answer_from_scene_graph,
                                      compute_accuracy, judge, judge_exact, judge_semantic,
                                      load_answers, load_verdicts, parse_number, store_answers,
                                      store_verdicts)
from semmap_bench.conditions import ConditionKind
from semmap_bench.errors import ContractError
from semmap_bench.gateway import Gateway, GatewayError
from semmap_bench.ingest import SceneGraph, load_scene_graph
from semmap_bench.vqa import QACategory, QAItem, QAStatus

DATA = Path(__file__).parent / "data"
C = QACategory


def _item(qa_id, cat, gt, question="q?"):
    return QAItem(qa_id, cat, question, gt, (0,), (), QAStatus.VALIDATED)


# --- answering -------------------------------------------------------------

def test_staircase_count_from_graph():
    graph = load_scene_graph(DATA / "graphs" / "stairs_15.json")
    item = _item("q1", C.MEASUREMENT, "1", "How many staircases are present?")
    transport = ScriptedTransport("15")
    ans = answer_from_scene_graph(graph, item, Gateway(transport))
    assert ans.answer == "15" and ans.answered_by is AnsweredBy.SCENE_GRAPH_LLM
    prompt = transport.requests[0].messages[0].text
    assert "Objects (15):" in prompt and "How many staircases are present?" in prompt
    assert judge_exact(item, ans).correct is False


def test_empty_graph_existence():
    item = _item("q2", C.BINARY_EXISTENCE, "no", "Is there a piano?")
    ans = answer_from_scene_graph(SceneGraph(), item, Gateway(ScriptedTransport("no")))
    assert ans.answer == "no"
    assert judge_exact(item, ans).correct


def test_blue_sofa():
    graph = load_scene_graph(DATA / "graphs" / "blue_sofa.json")
    item = _item("q3", C.BINARY_GENERAL, "yes", "Is there a blue sofa?")
    transport = ScriptedTransport("Yes.")
    ans = answer_from_scene_graph(graph, item, Gateway(transport))
    assert "sofa (a blue fabric sofa) {color: blue}" in transport.requests[0].messages[0].text
    assert judge_exact(item, ans).correct


def test_answer_gateway_error_names_item():
    from semmap_bench.gateway import TransientError
    gw = Gateway(ScriptedTransport(TransientError("busy")), max_attempts=1)
    with pytest.raises(GatewayError, match="q9"):
        answer_from_scene_graph(SceneGraph(), _item("q9", C.BINARY_GENERAL, "yes"), gw)


# --- exact judging ---------------------------------------------------------

CASES = json.loads((DATA / "judging_cases.json").read_text())


@pytest.mark.parametrize("case", CASES, ids=[f"{c['category']}:{c['gt']}:{c['answer']!r}"
                                             for c in CASES])
def test_exact_judging_fixture(case):
    item = _item("q", QACategory(case["category"]), case["gt"])
    v = judge_exact(item, SystemAnswer("q", case["answer"]))
    assert v.correct is case["correct"]
    assert v.method is JudgeMethod.EXACT and v.rationale == ""


@pytest.mark.parametrize("answer", ["yes", "Yes", "YES.", "yes!!", "Yes?"])
def test_exact_symmetric_under_case_and_punctuation(answer):
    assert judge_exact(_item("q", C.BINARY_GENERAL, "yes"), SystemAnswer("q", answer)).correct


def test_parse_number():
    assert parse_number("three") == 3
    assert parse_number("Answer: 1") == 1
    assert parse_number("nothing here") is None


def test_exact_rejects_semantic_category():
    with pytest.raises(ContractError):
        judge_exact(_item("q", C.COMPARISON, "lamp"), SystemAnswer("q", "lamp"))


# --- semantic judging ------------------------------------------------------

def test_semantic_correct():
    transport = ScriptedTransport('{"correct": true, "rationale": "same color"}')
    v = judge_semantic(_item("q", C.OBJECT_ATTRIBUTES, "white"),
                       SystemAnswer("q", "the door is white"), Gateway(transport))
    assert v.correct and v.method is JudgeMethod.LLM_JUDGE and v.rationale == "same color"
    assert transport.requests[0].temperature == 0.0


def test_semantic_incorrect():
    v = judge_semantic(_item("q", C.OBJECT_ATTRIBUTES, "white"), SystemAnswer("q", "gray"),
                       Gateway(ScriptedTransport('{"correct": false, "rationale": "differs"}')))
    assert not v.correct


def test_semantic_temperature_pinned_to_zero():
    transport = ScriptedTransport('{"correct": true}')
    judge_semantic(_item("q", C.COMPARISON, "lamp"), SystemAnswer("q", "the lamp"),
                   Gateway(transport), AnswerSettings(answer_temperature=0.7,
                                                      judge_temperature=0.9))
    assert transport.requests[0].temperature == 0.0


def test_semantic_judge_failure_counts_incorrect():
    gw = Gateway(ScriptedTransport("bad", "bad", "bad"), structured_retries=2)
    item = _item("q", C.RELATIONS_SPATIAL, "table")
    v = judge_semantic(item, SystemAnswer("q", "the table"), gw)
    assert v.judge_failed and not v.correct
    table = compute_accuracy([v], [item], "baseline")
    assert table.cells[(C.RELATIONS_SPATIAL, ConditionKind.BASELINE)].n_questions == 1
    excluded = compute_accuracy([v], [item], "baseline", exclude_judge_failures=True)
    assert excluded.cells == {}


def test_empty_answer_skips_judge():
    transport = ScriptedTransport()
    v = judge(_item("q", C.OBJECT_ATTRIBUTES, "white"), SystemAnswer("q", ""), Gateway(transport))
    assert not v.correct and transport.requests == []


# --- accuracy --------------------------------------------------------------

def test_accuracy_seven_of_ten():
    items = [_item(f"q{i}", C.BINARY_GENERAL, "yes") for i in range(10)]
    verdicts = [Verdict(f"q{i}", i < 7, JudgeMethod.EXACT) for i in range(10)]
    table = compute_accuracy(verdicts, items, "camera_light")
    cell = table.cells[(C.BINARY_GENERAL, ConditionKind.CAMERA_LIGHT)]
    assert (cell.n_questions, cell.n_correct, cell.accuracy) == (10, 7, 0.7)
    assert len(table.cells) == 1  # empty groups omitted


def test_functional_excluded_by_default():
    # 2 functional items (both correct), 3 spatial (1 correct), 1 binary (correct)
    items = [_item("f1", C.RELATIONS_FUNCTIONAL, "floor"), _item("f2", C.RELATIONS_FUNCTIONAL, "x"),
             _item("s1", C.RELATIONS_SPATIAL, "a"), _item("s2", C.RELATIONS_SPATIAL, "b"),
             _item("s3", C.RELATIONS_SPATIAL, "c"), _item("b1", C.BINARY_GENERAL, "yes")]
    correct = {"f1", "f2", "s1", "b1"}
    verdicts = [Verdict(it.qa_id, it.qa_id in correct,
                        JudgeMethod.EXACT if it.category is C.BINARY_GENERAL
                        else JudgeMethod.LLM_JUDGE) for it in items]
    table = compute_accuracy(verdicts, items, "baseline")
    assert {k[0] for k in table.cells} == {C.RELATIONS_SPATIAL, C.BINARY_GENERAL}
    total = sum(c.n_questions for c in table.cells.values())
    assert total == 4
    assert table.cells[(C.RELATIONS_SPATIAL, ConditionKind.BASELINE)].accuracy == pytest.approx(1 / 3)
    with_f = compute_accuracy(verdicts, items, "baseline", include_functional=True)
    assert with_f.cells[(C.RELATIONS_FUNCTIONAL, ConditionKind.BASELINE)].n_correct == 2


def test_accuracy_order_invariant():
    rng = random.Random(5)
    items = [_item(f"q{i}", list(QACategory)[i % 8], "yes") for i in range(40)]
    verdicts = [Verdict(it.qa_id, rng.random() < 0.5, JudgeMethod.EXACT) for it in items]
    a = compute_accuracy(verdicts, items, "velocity")
    rng.shuffle(verdicts)
    rng.shuffle(items)
    assert compute_accuracy(verdicts, items, "velocity").cells == a.cells


def test_all_correct_is_exactly_one():
    items = [_item(f"q{i}", list(QACategory)[i % 8], "yes") for i in range(24)]
    verdicts = [Verdict(it.qa_id, True, JudgeMethod.EXACT) for it in items]
    table = compute_accuracy(verdicts, items, "baseline")
    assert all(row[4] == 1.0 for row in table.rows())


def test_unknown_verdict_id():
    with pytest.raises(ContractError):
        compute_accuracy([Verdict("zz", True, JudgeMethod.EXACT)], [], "baseline")


def test_missing_verdict_counts_incorrect():
    items = [_item("a", C.BINARY_GENERAL, "yes"), _item("b", C.BINARY_GENERAL, "yes")]
    table = compute_accuracy([Verdict("a", True, JudgeMethod.EXACT)], items, "baseline")
    assert table.cells[(C.BINARY_GENERAL, ConditionKind.BASELINE)].accuracy == 0.5


def test_merge_sums_counts():
    items = [_item("a", C.BINARY_GENERAL, "yes")]
    t1 = compute_accuracy([Verdict("a", True, JudgeMethod.EXACT)], items, "baseline")
    t2 = compute_accuracy([Verdict("a", False, JudgeMethod.EXACT)], items, "baseline")
    cell = t1.merge(t2).cells[(C.BINARY_GENERAL, ConditionKind.BASELINE)]
    assert (cell.n_questions, cell.n_correct) == (2, 1)


def test_answer_and_verdict_files(tmp_path):
    answers = [SystemAnswer("q0", "Yes."), SystemAnswer("q1", "", AnsweredBy.DIRECT)]
    store_answers(answers, tmp_path / "a.jsonl", {"method": "cg"})
    header, back = load_answers(tmp_path / "a.jsonl")
    assert back == answers and header["method"] == "cg" and "template_hash" in header
    verdicts = [Verdict("q0", True, JudgeMethod.EXACT),
                Verdict("q1", False, JudgeMethod.LLM_JUDGE, "judging failure: x", True)]
    store_verdicts(verdicts, tmp_path / "v.jsonl", {"judge_model_id": "m"})
    assert load_verdicts(tmp_path / "v.jsonl")[1] == verdicts
