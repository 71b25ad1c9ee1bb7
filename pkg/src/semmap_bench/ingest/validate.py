from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import BenchError
from .cloud import load_point_cloud
from .manifest import SequenceSpec, list_keyframes
from .scene_graph import load_scene_graph


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    severity: str = "error"  # "error" | "warning"

    @property
    def fatal(self) -> bool:
        return self.severity == "error"

    def __str__(self):
        return f"{self.severity.upper()} {self.code}: {self.message}"


def _check_cloud(path, role, label_field, num_classes, issues):
    if path is None or not path.is_file():
        code = "MissingGroundTruth" if role == "gt_cloud" else "MissingPrediction"
        issues.append(Issue(code, f"{role} not found: {path}"))
        return
    try:
        cloud = load_point_cloud(path, label_field=label_field)
    except (BenchError, OSError, ValueError) as exc:
        issues.append(Issue("UnreadableCloud", f"{role} {path}: {exc}"))
        return
    if len(cloud) == 0:
        issues.append(Issue("EmptyCloud", f"{role} {path} has no points"))
    bad = ~np.isfinite(cloud.points).all(axis=1)
    if bad.any():
        issues.append(Issue("NonFinitePoint",
                            f"{role} {path}: {int(bad.sum())} point(s) with NaN/inf coordinates"))
    if num_classes is not None and role == "gt_cloud":
        unknown = int((cloud.class_ids >= num_classes).sum())
        if unknown:
            issues.append(Issue("UnknownLabel",
                                f"{role} {path}: {unknown} point(s) carry labels outside the "
                                f"vocabulary and are treated as void", "warning"))


def validate_sequence(spec: SequenceSpec, require_prediction: bool = False,
                      require_scene_graph: bool = False, require_keyframes: bool = False,
                      label_field: str = "class_id", pred_label_field: Optional[str] = None,
                      num_classes: Optional[int] = None) -> list:
    """Check that a sequence's files exist, load, and satisfy invariants.

    Returns a list of :class:`Issue`; empty means the sequence is usable.
    Never raises for data problems.
    """
    issues: list = []
    _check_cloud(spec.gt_cloud, "gt_cloud", label_field, num_classes, issues)
    if spec.pred_cloud is not None or require_prediction:
        if spec.pred_cloud is None:
            issues.append(Issue("MissingPrediction", "sequence has no pred_cloud"))
        else:
            _check_cloud(spec.pred_cloud, "pred_cloud", pred_label_field or label_field,
                         None, issues)
    if spec.scene_graph is not None or require_scene_graph:
        if spec.scene_graph is None or not spec.scene_graph.is_file():
            issues.append(Issue("MissingSceneGraph", f"scene graph not found: {spec.scene_graph}"))
        else:
            try:
                load_scene_graph(spec.scene_graph)
            except (BenchError, OSError) as exc:
                issues.append(Issue("InvalidSceneGraph", str(exc)))
    if spec.keyframes_dir is not None or require_keyframes:
        if spec.keyframes_dir is None or not spec.keyframes_dir.is_dir():
            issues.append(Issue("MissingKeyframes",
                                f"keyframes_dir not found: {spec.keyframes_dir}"))
        elif not list_keyframes(spec.keyframes_dir):
            issues.append(Issue("EmptyKeyframes", f"no images in {spec.keyframes_dir}"))
    if spec.scenario_config is not None and not spec.scenario_config.is_file():
        issues.append(Issue("MissingScenarioConfig",
                            f"scenario config not found: {spec.scenario_config}", "warning"))
    return issues
