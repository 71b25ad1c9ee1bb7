"""Result tables rendered to CSV and Markdown.

Metric cells use three decimals and percentages two, both rounded half-even.
Best and second-best entries are marked through rank columns (1 = best).
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Optional

from .conditions import CONDITION_ORDER, ConditionKind
from .errors import UndefinedMetricError
from .records import atomic_write_text
from .seg_eval import METRICS, aggregate_conditions, compute_degradation
from .vqa.models import QACategory

logger = logging.getLogger(__name__)

METRIC_TITLES = {"macc": "mAcc", "fmiou": "f-mIoU"}


def round_half_even(x: float, places: int) -> Decimal:
    return Decimal(repr(float(x))).quantize(Decimal(1).scaleb(-places), ROUND_HALF_EVEN)


def fmt_metric(x: Optional[float]) -> str:
    return "" if x is None else str(round_half_even(x, 3))


def fmt_percent(x: Optional[float]) -> str:
    if x is None:
        return ""
    d = round_half_even(x, 2)
    if d == 0:
        return "0.00"
    return f"+{d}" if d > 0 else str(d)


def competition_ranks(values: dict) -> dict:
    """Rank keys by rendered value, highest first; equal renderings share a rank."""
    rendered = {k: round_half_even(v, 3) for k, v in values.items() if v is not None}
    ordered = sorted(rendered.values(), reverse=True)
    return {k: ordered.index(v) + 1 for k, v in rendered.items()}


@dataclass
class Table:
    name: str
    title: str
    columns: list
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buf.getvalue()

    def to_markdown(self) -> str:
        def cell(v):
            return str(v).replace("|", "\\|")

        lines = [f"### {self.title}", "",
                 "| " + " | ".join(cell(c) for c in self.columns) + " |",
                 "|" + "|".join("---" for _ in self.columns) + "|"]
        lines += ["| " + " | ".join(cell(v) for v in row) + " |" for row in self.rows]
        return "\n".join(lines) + "\n"


@dataclass
class EvalReport:
    tables: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def to_markdown(self) -> str:
        parts = ["# Evaluation report", "", "## Run metadata", ""]
        for key, value in sorted(self.metadata.items()):
            text = json.dumps(value, sort_keys=True) if isinstance(value, (dict, list)) else value
            parts.append(f"- **{key}**: {text}")
        parts.append("")
        if self.warnings:
            parts += ["## Warnings", ""] + [f"- {w}" for w in self.warnings] + [""]
        parts.append("## Results")
        parts.append("")
        parts.append("Rank columns mark the best (1) and second-best (2) method per column.")
        parts.append("")
        for t in self.tables:
            parts.append(t.to_markdown())
        return "\n".join(parts)

    def write(self, out_dir) -> list:
        out_dir = Path(out_dir)
        written = []
        for t in self.tables:
            path = out_dir / f"{t.name}.csv"
            atomic_write_text(path, t.to_csv())
            written.append(path)
        path = out_dir / "report.md"
        atomic_write_text(path, self.to_markdown())
        written.append(path)
        path = out_dir / "metadata.json"
        atomic_write_text(path, json.dumps({"metadata": self.metadata, "warnings": self.warnings},
                                           indent=2, sort_keys=True) + "\n")
        written.append(path)
        return written


def _ordered_conditions(conds) -> list:
    return [c for c in CONDITION_ORDER if c in set(conds)]


def segmentation_tables(results, fps=None) -> list:
    """One table per metric: method x condition plus Min/Max/Avg and rank columns."""
    fps = fps or {}
    agg = aggregate_conditions(results)
    methods = sorted({m for m, _ in agg})
    conds = _ordered_conditions({c for a in agg.values() for c in a.per_condition})
    stats = ("Min", "Max", "Avg")
    tables = []
    for metric in METRICS:
        value_cols = [c.title for c in conds] + list(stats)
        table = Table(f"segmentation_{metric}", f"{METRIC_TITLES[metric]} per condition",
                      ["Method", "FPS"] + value_cols + [f"{c} rank" for c in value_cols])
        columns = {}
        for m in methods:
            a = agg[(m, metric)]
            vals = [a.per_condition.get(c) for c in conds] + [a.minimum, a.maximum, a.average]
            columns[m] = vals
        ranks = [competition_ranks({m: columns[m][j] for m in methods})
                 for j in range(len(value_cols))]
        for m in methods:
            rank_cells = [ranks[j].get(m, "") for j in range(len(value_cols))]
            f = fps.get(m)
            table.rows.append([m, "" if f is None else f"{f:g}"]
                              + [fmt_metric(v) for v in columns[m]] + rank_cells)
        tables.append(table)
    return tables


def degradation_tables(results, reference, warnings: list) -> list:
    """Per-metric D(%) of every condition against ``reference``.

    A method without a reference result is left out with a warning; with no
    reference result at all the tables are omitted.
    """
    reference = ConditionKind.parse(reference)
    agg = aggregate_conditions(results)
    methods = sorted({m for m, _ in agg})
    if not any(reference in agg[(m, METRICS[0])].per_condition for m in methods):
        warnings.append(f"no results for reference condition {reference.title}; "
                        "degradation table omitted")
        return []
    conds = _ordered_conditions({c for a in agg.values() for c in a.per_condition})
    tables = []
    for metric in METRICS:
        table = Table(f"degradation_{metric}",
                      f"{METRIC_TITLES[metric]} degradation D(%) vs {reference.title}",
                      ["Method"] + [c.title for c in conds])
        for m in methods:
            per = agg[(m, metric)].per_condition
            if reference not in per:
                if metric == METRICS[0]:
                    warnings.append(f"{m}: no {reference.title} result; degradation row omitted")
                continue
            row = [m]
            for c in conds:
                if c not in per:
                    row.append("")
                    continue
                try:
                    row.append(fmt_percent(compute_degradation(per[reference], per[c])))
                except UndefinedMetricError:
                    row.append("undefined")
            table.rows.append(row)
        tables.append(table)
    return tables


def accuracy_tables(tables_by_method: dict) -> list:
    """Category x condition accuracy per method, plus a long-form count table."""
    conds = _ordered_conditions({cond for t in tables_by_method.values() for _, cond in t.cells})
    pivot = Table("vqa_accuracy", "Answering Accuracy per category and condition",
                  ["Method", "Category"] + [c.title for c in conds])
    counts = Table("vqa_counts", "Answering Accuracy counts",
                   ["Method", "Category", "Condition", "Questions", "Correct", "Accuracy"])
    for method in sorted(tables_by_method):
        t = tables_by_method[method]
        for cat in QACategory:
            cells = [t.cells.get((cat, c)) for c in conds]
            if not any(cells):
                continue
            pivot.rows.append([method, cat.title]
                              + ["" if cell is None else fmt_metric(cell.accuracy)
                                 for cell in cells])
        for cat, cond, n, k, acc in t.rows():
            counts.rows.append([method, cat.title, cond.title, n, k, fmt_metric(acc)])
    return [pivot, counts]


def build_report(seg_results=(), accuracy_by_method=None, reference=None, fps=None,
                 metadata=None) -> EvalReport:
    report = EvalReport(metadata=dict(metadata or {}))
    seg_results = list(seg_results)
    if seg_results:
        report.tables += segmentation_tables(seg_results, fps)
        if reference is not None:
            report.tables += degradation_tables(seg_results, reference, report.warnings)
    if accuracy_by_method:
        report.tables += accuracy_tables(accuracy_by_method)
    for w in report.warnings:
        logger.warning("%s", w)
    return report
