from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import SchemaError
from ..records import read_records, write_records
from .models import QACategory, QAItem, QAStatus

QA_SET_KIND = "qa_set"
HEADER_FIELDS = ("dataset", "scene", "condition", "quotas", "seed", "template_hashes",
                 "model_id")


@dataclass
class QASet:
    items: list
    header: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    @property
    def validated(self) -> list:
        return [it for it in self.items if it.status is QAStatus.VALIDATED]


def item_from_dict(doc, path=None, line=None) -> QAItem:
    where = f"record {line}" if line is not None else None
    try:
        category = QACategory(doc["category"])
    except ValueError:
        raise SchemaError(f"unknown category '{doc['category']}'", path=path, field=where) from None
    except (KeyError, TypeError):
        raise SchemaError("record has no category", path=path, field=where) from None
    try:
        status = QAStatus(doc["status"])
        item = QAItem(
            qa_id=str(doc["qa_id"]),
            category=category,
            question=str(doc["question"]),
            gt_answer=str(doc["gt_answer"]),
            source_frames=tuple(int(f) for f in doc["source_frames"]),
            referenced_objects=tuple(str(o) for o in doc["referenced_objects"]),
            status=status,
            reason=doc.get("reason"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed QA record: {exc}", path=path, field=where) from None
    if (item.status is QAStatus.REJECTED) != (item.reason is not None):
        raise SchemaError("reason must be set exactly for rejected items", path=path, field=where)
    return item


def store_qa_set(items, path, header=None) -> None:
    if isinstance(items, QASet):
        header = {**items.header, **(header or {})}
        items = items.items
    header = dict(header or {})
    header["n_items"] = len(items)
    write_records(path, QA_SET_KIND, header, [it.to_dict() for it in items])


def load_qa_set(path) -> QASet:
    header, docs = read_records(path, QA_SET_KIND)
    items = [item_from_dict(d, path, i + 2) for i, d in enumerate(docs)]
    ids = [it.qa_id for it in items]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate qa_id", path=path)
    expected = header.pop("n_items", len(items))
    if expected != len(items):
        raise SchemaError(f"header announces {expected} items, file has {len(items)}", path=path)
    return QASet(items, header)
