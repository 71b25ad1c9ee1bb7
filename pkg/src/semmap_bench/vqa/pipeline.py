"""Question generation pipeline: frames -> descriptions -> questions -> validated set."""

from __future__ import annotations

import logging
import math
import random
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..errors import ContractError, IngestError
from ..gateway import ChatRequest, DEFAULT_MODEL, Gateway, Message, StructuredOutputError
from ..ingest.manifest import SequenceSpec, list_keyframes
from ..labels import normalize_label
from ..templates import render, template_hashes
from .models import (BINARY_CATEGORIES, CategoryQuota, DescribedObject, FrameSample,
                     QACategory, QAItem, QAStatus, SceneDescription)

logger = logging.getLogger(__name__)

TEMPLATE_NAMES = ("describe_frame", "generate_questions", "dedup_questions",
                  "validate_question") + tuple(f"category_{c.value}" for c in QACategory)

# Plausible indoor objects offered as hints for existence questions.
ABSENT_OBJECT_POOL = (
    "piano", "aquarium", "fireplace", "treadmill", "grandfather clock", "bathtub",
    "bicycle", "christmas tree", "guitar", "pool table", "refrigerator", "washing machine",
    "dishwasher", "microwave", "television", "printer", "ironing board", "crib",
    "dartboard", "drum kit", "globe", "harp", "telescope", "rocking chair", "bunk bed",
    "vacuum cleaner", "umbrella stand", "coat rack", "punching bag", "exercise ball",
    "sewing machine", "stroller", "suitcase", "wine rack", "hammock", "piano bench",
    "chandelier", "bean bag", "tricycle", "easel",
)


@dataclass(frozen=True)
class VQASettings:
    model_id: str = DEFAULT_MODEL
    describe_temperature: float = 0.0
    generate_temperature: float = 0.4
    validate_temperature: float = 0.0
    max_tokens: int = 4096
    workers: int = 4

    def request(self, prompt: str, temperature: float, images=(), schema=None) -> ChatRequest:
        return ChatRequest((Message("user", prompt, tuple(images)),), self.model_id,
                           temperature, self.max_tokens, schema)


@dataclass(frozen=True)
class SamplingPolicy:
    """Uniform stride or a fixed count of evenly spaced frames; the last frame is always kept."""

    stride: Optional[int] = None
    count: Optional[int] = None

    def __post_init__(self):
        if (self.stride is None) == (self.count is None):
            raise ContractError("give exactly one of stride or count")
        if (self.stride or self.count) < 1:
            raise ContractError("stride/count must be >= 1")

    def indices(self, n: int) -> list:
        if n <= 0:
            return []
        if self.stride is not None:
            picks = list(range(0, n, self.stride))
        elif self.count >= n:
            picks = list(range(n))
        elif self.count == 1:
            picks = [n - 1]
        else:
            step = (n - 1) / (self.count - 1)
            picks = sorted({int(math.floor(i * step + 0.5)) for i in range(self.count)})
        if picks[-1] != n - 1:
            picks.append(n - 1)
        return picks


def sample_keyframes(sequence: SequenceSpec, policy: SamplingPolicy, scene_id: str = "") -> list:
    if sequence.keyframes_dir is None:
        raise IngestError("sequence has no keyframes_dir")
    if not Path(sequence.keyframes_dir).is_dir():
        raise IngestError(f"keyframes_dir not found: {sequence.keyframes_dir}")
    files = list_keyframes(sequence.keyframes_dir)
    if not files:
        raise IngestError(f"no keyframe images in {sequence.keyframes_dir}")
    return [FrameSample(i, files[i], scene_id, sequence.condition)
            for i in policy.indices(len(files))]


# --- frame description -----------------------------------------------------

DESCRIPTION_SCHEMA = {
    "type": "object",
    "required": ["narrative", "objects"],
    "properties": {
        "narrative": {"type": "string"},
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name"],
                "properties": {
                    "name": {"type": "string", "minLength": 1, "pattern": r"\S"},
                    "attributes": {"type": "object",
                                   "additionalProperties": {"type": ["string", "number",
                                                                     "boolean"]}},
                    "relations": {
                        "type": "array",
                        "items": {"type": "object", "required": ["relation", "object"],
                                  "properties": {"relation": {"type": "string"},
                                                 "object": {"type": "string"}}},
                    },
                },
            },
        },
    },
}


def describe_frame(frame: FrameSample, gateway: Gateway,
                   settings: VQASettings = VQASettings()) -> SceneDescription:
    with open(frame.image_path, "rb"):
        pass  # surface unreadable images as OSError before any gateway work
    req = settings.request(render("describe_frame"), settings.describe_temperature,
                           (frame.image_path,), DESCRIPTION_SCHEMA)
    try:
        doc = gateway.complete_structured(req)
    except StructuredOutputError as exc:
        raise StructuredOutputError(f"frame {frame.frame_id}: {exc}", exc.raw_text,
                                    exc.attempts) from exc
    objects = []
    for o in doc["objects"]:
        attrs = {str(k): str(v) for k, v in (o.get("attributes") or {}).items()}
        rels = tuple((str(r["relation"]), str(r["object"])) for r in o.get("relations") or ())
        objects.append(DescribedObject(o["name"].strip(), attrs, rels))
    return SceneDescription(frame.frame_id, doc["narrative"].strip(), tuple(objects))


def describe_frames(frames, gateway, settings: VQASettings = VQASettings()) -> list:
    """Describe frames concurrently; output keeps frame order."""
    with ThreadPoolExecutor(max(1, settings.workers)) as pool:
        return list(pool.map(lambda f: describe_frame(f, gateway, settings), frames))


def aggregate_descriptions(descs) -> str:
    """Merge per-frame descriptions into one text.

    Objects are unioned by normalized name. Differing values for one attribute
    are kept as ``a|b`` alternatives and flagged as conflicting.
    """
    descs = list(descs)
    if not descs:
        raise ContractError("no descriptions to aggregate")
    merged = {}  # key -> [display name, {attr: [values]}, [relations], [frames]]
    for d in descs:
        for obj in d.objects:
            key = normalize_label(obj.name)
            entry = merged.setdefault(key, [key, {}, [], []])
            for attr, value in obj.attributes.items():
                values = entry[1].setdefault(normalize_label(attr), [])
                v = str(value).strip().lower()
                if v not in values:
                    values.append(v)
            for rel, other in obj.relations:
                pair = (rel.strip().lower(), normalize_label(other))
                if pair not in entry[2]:
                    entry[2].append(pair)
            if d.frame_id not in entry[3]:
                entry[3].append(d.frame_id)
    lines = ["Objects:"]
    if not merged:
        lines.append("- (none listed)")
    for name, attrs, rels, frames in merged.values():
        parts = [name] + [f"{a}: {'|'.join(v)}" for a, v in attrs.items()]
        line = "- " + ", ".join(parts)
        conflicts = [a for a, v in attrs.items() if len(v) > 1]
        if conflicts:
            line += f" (conflicting: {', '.join(conflicts)})"
        line += " [frames " + ", ".join(str(f) for f in frames) + "]"
        lines.append(line)
        for rel, other in rels:
            lines.append(f"    {rel} {other}")
    lines.append("")
    lines.append("Frame narratives:")
    for d in descs:
        lines.append(f"[frame {d.frame_id}] {d.narrative}")
    return "\n".join(lines) + "\n"


# --- question generation ---------------------------------------------------

QUESTIONS_SCHEMA = {
    "type": "object",
    "required": ["questions"],
    "properties": {
        "questions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["question", "answer"],
                "properties": {
                    "question": {"type": "string"},
                    "answer": {"type": ["string", "number", "boolean"]},
                    "objects": {"type": "array", "items": {"type": "string"}},
                    "frames": {"type": "array", "items": {"type": "integer"}},
                },
            },
        },
    },
}

_PUNCT = re.compile(r"[^\w\s]")


def normalize_binary(text: str) -> Optional[str]:
    """'Yes.' -> 'yes'; returns None unless the first word is yes/no."""
    words = _PUNCT.sub(" ", str(text).lower()).split()
    if words and words[0] in ("yes", "no"):
        return words[0]
    return None


def mentioned_objects(unified: str) -> set:
    names = set()
    for line in unified.splitlines():
        if line.startswith("- ") and line != "- (none listed)":
            names.add(line[2:].split(",")[0].split(" [frames")[0].strip())
    return names


@dataclass
class GenerationResult:
    items: list
    requested: dict
    produced: dict
    template_hashes: dict = field(default_factory=dict)

    @property
    def shortfall(self) -> dict:
        return {c.value: self.requested[c] - self.produced.get(c, 0)
                for c in self.requested if self.requested[c] > self.produced.get(c, 0)}


def _absent_hints(unified: str, seed: int, k: int) -> list:
    present = mentioned_objects(unified)
    text = unified.lower()
    pool = [o for o in ABSENT_OBJECT_POOL if o not in present and o not in text]
    random.Random(seed).shuffle(pool)
    return pool[:k]


def _frames_for(raw_frames, valid_ids):
    picked = tuple(sorted({int(f) for f in raw_frames if int(f) in valid_ids}))
    if picked or not valid_ids:
        return picked
    return (min(valid_ids),)


def generate_questions(unified: str, quotas: CategoryQuota, n_total: int, seed: int,
                       gateway: Gateway, frames=(), settings: VQASettings = VQASettings(),
                       ) -> GenerationResult:
    """Ask for ``quotas.allocate(n_total)`` questions per category.

    Items the model fails to deliver are reported as shortfall, not raised.
    Existence questions whose objects do occur in the description are dropped.
    """
    requested = quotas.allocate(n_total)
    valid_ids = {f.frame_id for f in frames}
    present = mentioned_objects(unified)
    items, produced = [], Counter()
    for category in QACategory:
        count = requested[category]
        if count == 0:
            continue
        extra = ""
        if category is QACategory.BINARY_EXISTENCE:
            hints = _absent_hints(unified, seed, 2 * count)
            extra = "Candidate absent objects: " + ", ".join(hints)
        prompt = render("generate_questions", category_name=category.title,
                        category_guidance=render(f"category_{category.value}").strip(),
                        count=count, seed=seed, extra=extra, description=unified.rstrip())
        req = settings.request(prompt, settings.generate_temperature, schema=QUESTIONS_SCHEMA)
        try:
            doc = gateway.complete_structured(req)
        except StructuredOutputError as exc:
            logger.warning("no usable questions for %s: %s", category.value, exc)
            continue
        kept = 0
        for q in doc["questions"]:
            if kept == count:
                break
            question = str(q["question"]).strip()
            answer = q["answer"]
            if isinstance(answer, bool):
                answer = "yes" if answer else "no"
            answer = str(answer).strip()
            if not question or not answer:
                continue
            objects = tuple(normalize_label(o) for o in q.get("objects") or () if o.strip())
            if category in BINARY_CATEGORIES:
                answer = normalize_binary(answer) or answer
            if category is QACategory.BINARY_EXISTENCE:
                if answer != "no" or any(o in present for o in objects):
                    continue
            items.append(QAItem(
                qa_id="",
                category=category,
                question=question,
                gt_answer=answer,
                source_frames=_frames_for(q.get("frames") or (), valid_ids),
                referenced_objects=objects,
            ))
            kept += 1
        produced[category] = kept
        if kept < count:
            logger.info("category %s: %d of %d questions", category.value, kept, count)
    items = [replace(it, qa_id=f"q{i:04d}") for i, it in enumerate(items)]
    return GenerationResult(items, requested, dict(produced), template_hashes(TEMPLATE_NAMES))


# --- validation ------------------------------------------------------------

DEDUP_SCHEMA = {
    "type": "object",
    "required": ["duplicates"],
    "properties": {
        "duplicates": {
            "type": "array",
            "items": {"type": "object", "required": ["first", "second"],
                      "properties": {"first": {"type": "string"},
                                     "second": {"type": "string"}}},
        },
    },
}

CHECK_SCHEMA = {
    "type": "object",
    "required": ["verdict"],
    "properties": {
        "verdict": {"enum": ["valid", "ambiguous", "invalid", "inconsistent"]},
        "answer": {"type": ["string", "number"]},
        "reason": {"type": "string"},
    },
}


def question_key(text: str) -> str:
    return re.sub(r"\s+", " ", text.lower()).strip().rstrip("?.! ").strip()


def _parse_count(text):
    try:
        value = float(str(text).strip())
    except ValueError:
        return None
    return value if math.isfinite(value) and value >= 0 else None


def answer_format_problem(item: QAItem) -> Optional[str]:
    if item.category in BINARY_CATEGORIES and item.gt_answer not in ("yes", "no"):
        return "invalid answer format"
    if item.category is QACategory.MEASUREMENT and _parse_count(item.gt_answer) is None:
        return "invalid answer format"
    if not item.gt_answer.strip():
        return "empty answer"
    return None


def _semantic_duplicates(items, gateway, settings):
    """Return {qa_id: reason} for later members of LLM-flagged duplicate pairs."""
    listing = "\n".join(f"[{it.qa_id}] {it.question}" for it in items)
    req = settings.request(render("dedup_questions", questions=listing),
                           settings.validate_temperature, schema=DEDUP_SCHEMA)
    try:
        doc = gateway.complete_structured(req)
    except StructuredOutputError as exc:
        logger.warning("semantic dedup skipped for %s: %s", items[0].category.value, exc)
        return {}
    ids = {it.qa_id for it in items}
    pairs = sorted({tuple(sorted((p["first"], p["second"]))) for p in doc["duplicates"]
                    if p["first"] in ids and p["second"] in ids and p["first"] != p["second"]})
    dropped = {}
    for keep, drop in pairs:
        if keep in dropped or drop in dropped:
            continue
        dropped[drop] = f"semantic duplicate of {keep}"
    return dropped


def _check_item(item, unified, frame_paths, gateway, settings):
    images = ()
    for fid in item.source_frames:
        if fid in frame_paths:
            images = (frame_paths[fid],)
            break
    prompt = render("validate_question", category=item.category.title, question=item.question,
                    answer=item.gt_answer, description=unified.rstrip())
    doc = gateway.complete_structured(
        settings.request(prompt, settings.validate_temperature, images, CHECK_SCHEMA))
    if doc["verdict"] != "valid":
        return item.reject(doc["verdict"])
    corrected = str(doc.get("answer", "")).strip()
    if corrected:
        if item.category in BINARY_CATEGORIES:
            corrected = normalize_binary(corrected) or corrected
        item = replace(item, gt_answer=corrected)
    problem = answer_format_problem(item)
    if problem:
        return item.reject(problem)
    return replace(item, status=QAStatus.VALIDATED, reason=None)


def validate_questions(items, unified: str, frames, gateway: Gateway,
                       settings: VQASettings = VQASettings()) -> list:
    """Exact dedup, per-category semantic dedup, then a per-item consistency check.

    Returns every input item, in input order, either Validated or Rejected
    with a reason.
    """
    items = list(items)
    out = {}
    seen = {}
    survivors = []
    for it in items:
        if it.rejected:
            out[it.qa_id] = it
            continue
        key = question_key(it.question)
        if key in seen:
            out[it.qa_id] = it.reject(f"duplicate of {seen[key]}")
            continue
        seen[key] = it.qa_id
        survivors.append(it)

    remaining = []
    for category in QACategory:
        group = [it for it in survivors if it.category is category]
        dropped = _semantic_duplicates(group, gateway, settings) if len(group) > 1 else {}
        for it in group:
            if it.qa_id in dropped:
                out[it.qa_id] = it.reject(dropped[it.qa_id])
            else:
                remaining.append(it)

    frame_paths = {f.frame_id: f.image_path for f in frames}
    with ThreadPoolExecutor(max(1, settings.workers)) as pool:
        checked = list(pool.map(
            lambda it: _check_item(it, unified, frame_paths, gateway, settings), remaining))
    for it in checked:
        out[it.qa_id] = it
    return [out[it.qa_id] for it in items]


# --- balancing -------------------------------------------------------------

def balance_questions(items, max_object_share: float) -> list:
    """Reject items until no object is over-represented.

    An object may appear in at most ``max(1, floor(share * n))`` of the ``n``
    surviving items. While some object exceeds that, the item with the highest
    qa_id among those referencing the most frequent offending object is
    rejected. Already rejected items pass through untouched.
    """
    if not 0 < max_object_share <= 1:
        raise ContractError("max_object_share must lie in (0, 1]")
    items = list(items)
    alive = {it.qa_id: it for it in items if not it.rejected}
    removed = {}
    while alive:
        n = len(alive)
        limit = max(1, math.floor(max_object_share * n + 1e-9))
        counts = Counter(o for it in alive.values() for o in set(it.referenced_objects))
        over = [(c, o) for o, c in counts.items() if c > limit]
        if not over:
            break
        _, obj = min(over, key=lambda t: (-t[0], t[1]))
        victim = max(q for q, it in alive.items() if obj in it.referenced_objects)
        removed[victim] = obj
        del alive[victim]
    return [it.reject(f"over-represented object: {removed[it.qa_id]}")
            if it.qa_id in removed else it for it in items]


def category_counts(items) -> dict:
    counts = Counter(it.category for it in items if not it.rejected)
    return {c.value: counts.get(c, 0) for c in QACategory}
