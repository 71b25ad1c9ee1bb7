"""Answering questions from a scene graph, judging answers, and Answering Accuracy."""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .conditions import ConditionKind
from .errors import ContractError, SchemaError
from .gateway import DEFAULT_MODEL, ChatRequest, Gateway, GatewayError, Message, StructuredOutputError
from .ingest.scene_graph import SceneGraph
from .records import read_records, write_records
from .templates import render, template_hash
from .vqa.models import BINARY_CATEGORIES, EXACT_CATEGORIES, QACategory, QAItem
from .vqa.pipeline import normalize_binary

logger = logging.getLogger(__name__)

NUMBER_WORDS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6, "seven": 7,
    "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12, "thirteen": 13,
    "fourteen": 14, "fifteen": 15, "sixteen": 16, "seventeen": 17, "eighteen": 18,
    "nineteen": 19, "twenty": 20,
}
_NUMBER_TOKEN = re.compile(r"\d+(?:\.\d+)?|[a-z]+")


class AnsweredBy(str, Enum):
    DIRECT = "direct"
    SCENE_GRAPH_LLM = "scene_graph_llm"


class JudgeMethod(str, Enum):
    EXACT = "exact"
    LLM_JUDGE = "llm_judge"


@dataclass(frozen=True)
class SystemAnswer:
    qa_id: str
    answer: str
    answered_by: AnsweredBy = AnsweredBy.SCENE_GRAPH_LLM

    def to_dict(self):
        return {"qa_id": self.qa_id, "answer": self.answer, "answered_by": self.answered_by.value}


@dataclass(frozen=True)
class Verdict:
    qa_id: str
    correct: bool
    method: JudgeMethod
    rationale: str = ""
    judge_failed: bool = False

    def __post_init__(self):
        if self.method is JudgeMethod.EXACT and self.rationale:
            raise ValueError("exact verdicts carry no rationale")

    def to_dict(self):
        return {"qa_id": self.qa_id, "correct": self.correct, "method": self.method.value,
                "rationale": self.rationale, "judge_failed": self.judge_failed}


@dataclass(frozen=True)
class AnswerSettings:
    model_id: str = DEFAULT_MODEL
    answer_temperature: float = 0.0
    judge_temperature: float = 0.0
    max_tokens: int = 512
    workers: int = 4
    include_functional: bool = False
    exclude_judge_failures: bool = False


# --- answering -------------------------------------------------------------

def answer_from_scene_graph(graph: SceneGraph, item: QAItem, gateway: Gateway,
                            settings: AnswerSettings = AnswerSettings()) -> SystemAnswer:
    prompt = render("answer_from_graph", graph=graph.to_prompt_text(), question=item.question)
    req = ChatRequest((Message("user", prompt),), settings.model_id,
                      settings.answer_temperature, settings.max_tokens)
    try:
        text = gateway.complete(req).text
    except GatewayError as exc:
        raise GatewayError(f"answering {item.qa_id}: {exc}", exc) from exc
    return SystemAnswer(item.qa_id, text.strip(), AnsweredBy.SCENE_GRAPH_LLM)


def answer_all(graph: SceneGraph, items, gateway: Gateway,
               settings: AnswerSettings = AnswerSettings()) -> list:
    items = list(items)
    with ThreadPoolExecutor(max(1, settings.workers)) as pool:
        return list(pool.map(lambda it: answer_from_scene_graph(graph, it, gateway, settings),
                             items))


# --- judging ---------------------------------------------------------------

def parse_number(text: str) -> Optional[float]:
    """First number in ``text``: digit strings or English words zero..twenty."""
    for token in _NUMBER_TOKEN.findall(str(text).lower()):
        if token[0].isdigit():
            return float(token)
        if token in NUMBER_WORDS:
            return float(NUMBER_WORDS[token])
    return None


def judge_exact(item: QAItem, ans: SystemAnswer) -> Verdict:
    if item.category not in EXACT_CATEGORIES:
        raise ContractError(f"{item.category.value} questions need semantic judging")
    if item.category in BINARY_CATEGORIES:
        predicted = normalize_binary(ans.answer)
        expected = normalize_binary(item.gt_answer)
        correct = predicted is not None and predicted == expected
    else:
        predicted = parse_number(ans.answer)
        expected = parse_number(item.gt_answer)
        correct = predicted is not None and predicted == expected
    return Verdict(item.qa_id, correct, JudgeMethod.EXACT)


JUDGE_SCHEMA = {
    "type": "object",
    "required": ["correct"],
    "properties": {"correct": {"type": "boolean"}, "rationale": {"type": "string"}},
}


def judge_semantic(item: QAItem, ans: SystemAnswer, gateway: Gateway,
                   settings: AnswerSettings = AnswerSettings()) -> Verdict:
    if item.category in EXACT_CATEGORIES:
        raise ContractError(f"{item.category.value} questions are judged exactly")
    if not ans.answer.strip():
        return Verdict(item.qa_id, False, JudgeMethod.LLM_JUDGE, "no answer given")
    prompt = render("judge_answer", question=item.question, gt_answer=item.gt_answer,
                    answer=ans.answer)
    # judging always runs at temperature 0
    req = ChatRequest((Message("user", prompt),), settings.model_id, 0.0, settings.max_tokens,
                      JUDGE_SCHEMA)
    try:
        doc = gateway.complete_structured(req)
    except StructuredOutputError as exc:
        logger.warning("judge failed on %s: %s", item.qa_id, exc)
        return Verdict(item.qa_id, False, JudgeMethod.LLM_JUDGE, f"judging failure: {exc}", True)
    return Verdict(item.qa_id, bool(doc["correct"]), JudgeMethod.LLM_JUDGE,
                   str(doc.get("rationale", "")).strip() or "(none)")


def judge(item: QAItem, ans: SystemAnswer, gateway: Optional[Gateway] = None,
          settings: AnswerSettings = AnswerSettings()) -> Verdict:
    if item.qa_id != ans.qa_id:
        raise ContractError(f"answer {ans.qa_id} does not belong to {item.qa_id}")
    if item.category in EXACT_CATEGORIES:
        return judge_exact(item, ans)
    if gateway is None:
        raise ContractError("semantic judging needs a gateway")
    return judge_semantic(item, ans, gateway, settings)


def judge_all(items, answers, gateway: Optional[Gateway],
              settings: AnswerSettings = AnswerSettings()) -> list:
    """One verdict per item; items without an answer are judged on an empty answer."""
    by_id = {a.qa_id: a for a in answers}
    items = list(items)

    def one(it):
        return judge(it, by_id.get(it.qa_id, SystemAnswer(it.qa_id, "", AnsweredBy.DIRECT)),
                     gateway, settings)

    with ThreadPoolExecutor(max(1, settings.workers)) as pool:
        return list(pool.map(one, items))


# --- accuracy --------------------------------------------------------------

@dataclass(frozen=True)
class AccuracyCell:
    n_questions: int
    n_correct: int

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_questions


@dataclass
class AccuracyTable:
    cells: dict = field(default_factory=dict)  # (QACategory, ConditionKind) -> AccuracyCell

    def merge(self, other: "AccuracyTable") -> "AccuracyTable":
        cells = dict(self.cells)
        for key, cell in other.cells.items():
            prev = cells.get(key)
            cells[key] = cell if prev is None else AccuracyCell(
                prev.n_questions + cell.n_questions, prev.n_correct + cell.n_correct)
        return AccuracyTable(cells)

    def rows(self):
        """(category, condition, n_questions, n_correct, accuracy) in enum order."""
        order_c = list(QACategory)
        order_k = list(ConditionKind)
        for (cat, cond) in sorted(self.cells, key=lambda k: (order_c.index(k[0]),
                                                            order_k.index(k[1]))):
            cell = self.cells[(cat, cond)]
            yield cat, cond, cell.n_questions, cell.n_correct, cell.accuracy


def compute_accuracy(verdicts, items, condition, include_functional: bool = False,
                     exclude_judge_failures: bool = False) -> AccuracyTable:
    """Correct / total per category for one condition.

    Every non-rejected item counts toward its category total; an item with no
    verdict counts as incorrect. Functional-relation questions are left out
    unless ``include_functional`` is set.
    """
    condition = ConditionKind.parse(condition)
    items = {it.qa_id: it for it in items if not it.rejected}
    verdict_by_id = {}
    for v in verdicts:
        if v.qa_id not in items:
            raise ContractError(f"verdict for unknown qa_id '{v.qa_id}'")
        verdict_by_id[v.qa_id] = v
    totals = defaultdict(lambda: [0, 0])
    for qa_id, it in items.items():
        if it.category is QACategory.RELATIONS_FUNCTIONAL and not include_functional:
            continue
        v = verdict_by_id.get(qa_id)
        if v is not None and v.judge_failed and exclude_judge_failures:
            continue
        t = totals[it.category]
        t[0] += 1
        t[1] += int(v is not None and v.correct)
    return AccuracyTable({(cat, condition): AccuracyCell(n, k)
                          for cat, (n, k) in totals.items() if n > 0})


# --- files -----------------------------------------------------------------

ANSWERS_KIND = "answers"
VERDICTS_KIND = "verdicts"


def store_answers(answers, path, header=None) -> None:
    header = {"template_hash": template_hash("answer_from_graph"), **(header or {})}
    write_records(path, ANSWERS_KIND, header, [a.to_dict() for a in answers])


def load_answers(path):
    header, docs = read_records(path, ANSWERS_KIND)
    try:
        answers = [SystemAnswer(str(d["qa_id"]), str(d["answer"]), AnsweredBy(d["answered_by"]))
                   for d in docs]
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"malformed answer record: {exc}", path=path) from None
    return header, answers


def store_verdicts(verdicts, path, header=None) -> None:
    header = {"template_hash": template_hash("judge_answer"), **(header or {})}
    write_records(path, VERDICTS_KIND, header, [v.to_dict() for v in verdicts])


def load_verdicts(path):
    header, docs = read_records(path, VERDICTS_KIND)
    try:
        verdicts = [Verdict(str(d["qa_id"]), bool(d["correct"]), JudgeMethod(d["method"]),
                            str(d.get("rationale", "")), bool(d.get("judge_failed", False)))
                    for d in docs]
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"malformed verdict record: {exc}", path=path) from None
    return header, verdicts
