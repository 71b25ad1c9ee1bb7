from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Optional

from ..conditions import ConditionKind
from ..errors import ContractError


class QACategory(str, Enum):
    BINARY_GENERAL = "binary_general"
    BINARY_EXISTENCE = "binary_existence"
    BINARY_LOGICAL = "binary_logical"
    MEASUREMENT = "measurement"
    OBJECT_ATTRIBUTES = "object_attributes"
    RELATIONS_FUNCTIONAL = "relations_functional"
    RELATIONS_SPATIAL = "relations_spatial"
    COMPARISON = "comparison"

    @property
    def is_binary(self) -> bool:
        return self in BINARY_CATEGORIES

    @property
    def title(self) -> str:
        return _TITLES[self]


BINARY_CATEGORIES = frozenset({QACategory.BINARY_GENERAL, QACategory.BINARY_EXISTENCE,
                               QACategory.BINARY_LOGICAL})
EXACT_CATEGORIES = BINARY_CATEGORIES | {QACategory.MEASUREMENT}

_TITLES = {
    QACategory.BINARY_GENERAL: "Binary General",
    QACategory.BINARY_EXISTENCE: "Binary Existence-Based",
    QACategory.BINARY_LOGICAL: "Binary Logical",
    QACategory.MEASUREMENT: "Measurement",
    QACategory.OBJECT_ATTRIBUTES: "Object Attributes",
    QACategory.RELATIONS_FUNCTIONAL: "Object Relations - Functional",
    QACategory.RELATIONS_SPATIAL: "Object Relations - Spatial",
    QACategory.COMPARISON: "Comparison",
}

# Observed category mix of the reference question sets, as fractions.
DEFAULT_RATIOS = {
    QACategory.BINARY_GENERAL: 0.186,
    QACategory.BINARY_EXISTENCE: 0.166,
    QACategory.BINARY_LOGICAL: 0.184,
    QACategory.MEASUREMENT: 0.052,
    QACategory.OBJECT_ATTRIBUTES: 0.170,
    QACategory.RELATIONS_FUNCTIONAL: 0.008,
    QACategory.RELATIONS_SPATIAL: 0.187,
    QACategory.COMPARISON: 0.047,
}

# Questions per scene in the reference runs.
DEFAULT_N_TOTAL = {"replicacad": 184, "hm3d": 76}


@dataclass(frozen=True)
class CategoryQuota:
    ratios: dict = field(default_factory=lambda: dict(DEFAULT_RATIOS))

    def __post_init__(self):
        ratios = {QACategory(k): float(v) for k, v in self.ratios.items()}
        if any(v < 0 for v in ratios.values()):
            raise ContractError("category ratios must be non-negative")
        total = sum(ratios.values())
        if abs(total - 1.0) > 1e-9:
            raise ContractError(f"category ratios must sum to 1, got {total!r}")
        # fixed enum order keeps allocation and serialization deterministic
        object.__setattr__(self, "ratios", {c: ratios.get(c, 0.0) for c in QACategory})

    def allocate(self, n_total: int) -> dict:
        """Per-category counts by largest-remainder rounding.

        Remainder ties go to the category listed first.
        """
        if n_total < 0:
            raise ContractError("n_total must be >= 0")
        exact = {c: Fraction(str(r)) * n_total for c, r in self.ratios.items()}
        counts = {c: int(v) for c, v in exact.items()}  # floor for non-negative values
        left = n_total - sum(counts.values())
        order = sorted(QACategory, key=lambda c: (-(exact[c] - counts[c]), list(QACategory).index(c)))
        for c in order[:left]:
            counts[c] += 1
        return counts

    def to_dict(self) -> dict:
        return {c.value: r for c, r in self.ratios.items()}


@dataclass(frozen=True)
class FrameSample:
    frame_id: int
    image_path: Path
    scene_id: str = ""
    condition: Optional[ConditionKind] = None


@dataclass(frozen=True)
class DescribedObject:
    name: str
    attributes: dict = field(default_factory=dict)
    relations: tuple = ()  # of (relation, other object)

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("object name must be non-empty")


@dataclass(frozen=True)
class SceneDescription:
    frame_id: int
    narrative: str
    objects: tuple = ()


class QAStatus(str, Enum):
    GENERATED = "generated"
    VALIDATED = "validated"
    REJECTED = "rejected"


@dataclass(frozen=True)
class QAItem:
    qa_id: str
    category: QACategory
    question: str
    gt_answer: str
    source_frames: tuple = ()
    referenced_objects: tuple = ()
    status: QAStatus = QAStatus.GENERATED
    reason: Optional[str] = None  # set iff status is REJECTED

    @property
    def rejected(self) -> bool:
        return self.status is QAStatus.REJECTED

    def reject(self, reason: str) -> "QAItem":
        return replace(self, status=QAStatus.REJECTED, reason=reason)

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "category": self.category.value,
            "question": self.question,
            "gt_answer": self.gt_answer,
            "source_frames": list(self.source_frames),
            "referenced_objects": list(self.referenced_objects),
            "status": self.status.value,
            "reason": self.reason,
        }
