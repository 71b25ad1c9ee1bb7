"""JSON-lines documents with a header line: QA sets, answers, verdicts.

Line 1 is ``{"kind": ..., "version": 1, ...header fields}``; each following
line is one record. Keys are sorted so identical content gives identical bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .errors import ParseError, SchemaError

FORMAT_VERSION = 1


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def render_records(kind: str, header: dict, records) -> str:
    head = {"kind": kind, "version": FORMAT_VERSION, **header}
    lines = [dumps(head)] + [dumps(r) for r in records]
    return "\n".join(lines) + "\n"


def write_records(path, kind: str, header: dict, records) -> None:
    atomic_write_text(path, render_records(kind, header, records))


def read_records(path, kind: str):
    """Return ``(header, records)``; header excludes the kind/version keys."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise SchemaError("empty file, expected a header line", path=path)
    docs = []
    for i, line in enumerate(lines, start=1):
        try:
            docs.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, path=path, line=i) from None
    header = docs[0]
    if not isinstance(header, dict) or header.get("kind") != kind:
        raise SchemaError(f"expected a '{kind}' header", path=path, field="kind")
    if header.get("version") != FORMAT_VERSION:
        raise SchemaError(f"unsupported version {header.get('version')!r}", path=path,
                          field="version")
    header = {k: v for k, v in header.items() if k not in ("kind", "version")}
    return header, docs[1:]
