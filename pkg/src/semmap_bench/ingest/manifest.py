"""Dataset manifest: one YAML/JSON document per dataset.

Example::

    dataset_name: replica-demo
    class_vocabulary_path: classes.txt
    scenes:
      - scene_id: apt_0
        sequences:
          - condition: baseline
            gt_cloud: apt_0/baseline/gt.ply
            pred_cloud: apt_0/baseline/pred.ply      # optional
            scene_graph: apt_0/baseline/graph.json   # optional
            keyframes_dir: apt_0/baseline/frames     # optional
            method_fps: 0.19                         # optional, metadata only

All paths are resolved relative to the manifest file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import yaml

from ..conditions import ConditionKind
from ..errors import ParseError, SchemaError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

_MANIFEST_KEYS = {"dataset_name", "scenes", "class_vocabulary_path", "dataset_kind"}
_SCENE_KEYS = {"scene_id", "sequences"}
_SEQUENCE_KEYS = {"condition", "gt_cloud", "pred_cloud", "scene_graph", "keyframes_dir",
                  "method_fps", "scenario_config"}


@dataclass(frozen=True)
class SequenceSpec:
    condition: ConditionKind
    gt_cloud: Path
    pred_cloud: Optional[Path] = None
    scene_graph: Optional[Path] = None
    keyframes_dir: Optional[Path] = None
    method_fps: Optional[float] = None
    scenario_config: Optional[Path] = None


@dataclass(frozen=True)
class SceneEntry:
    scene_id: str
    sequences: tuple

    def sequence(self, condition) -> Optional[SequenceSpec]:
        condition = ConditionKind.parse(condition)
        for seq in self.sequences:
            if seq.condition is condition:
                return seq
        return None


@dataclass(frozen=True)
class DatasetManifest:
    dataset_name: str
    scenes: tuple
    class_vocabulary_path: Path
    root: Path
    dataset_kind: Optional[str] = None

    def scene(self, scene_id) -> SceneEntry:
        for s in self.scenes:
            if s.scene_id == scene_id:
                return s
        raise KeyError(scene_id)

    @property
    def conditions(self) -> set:
        return {seq.condition for s in self.scenes for seq in s.sequences}


def read_structured(path):
    """Parse a YAML (JSON is a subset) document, mapping syntax errors to ParseError."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ParseError(problem, path=path, line=line) from None


def _require(doc, key, path, where, kind=None):
    if key not in doc or doc[key] is None:
        raise SchemaError(f"missing required field '{key}'", path=path, field=where + key)
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"field '{key}' has wrong type {type(value).__name__}",
                          path=path, field=where + key)
    return value


def _check_keys(doc, allowed, path, where):
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise SchemaError(f"unknown field(s): {', '.join(unknown)}", path=path, field=where)


def manifest_from_dict(doc, root: Path, path=None) -> DatasetManifest:
    if not isinstance(doc, dict):
        raise SchemaError("manifest must be a mapping", path=path)
    _check_keys(doc, _MANIFEST_KEYS, path, "")
    name = str(_require(doc, "dataset_name", path, ""))
    vocab = root / str(_require(doc, "class_vocabulary_path", path, ""))
    raw_scenes = doc.get("scenes") or []
    if not isinstance(raw_scenes, list):
        raise SchemaError("'scenes' must be a list", path=path, field="scenes")
    scenes = []
    seen = set()
    for i, raw in enumerate(raw_scenes):
        where = f"scenes[{i}]."
        if not isinstance(raw, dict):
            raise SchemaError("scene must be a mapping", path=path, field=where[:-1])
        _check_keys(raw, _SCENE_KEYS, path, where[:-1])
        scene_id = str(_require(raw, "scene_id", path, where))
        if scene_id in seen:
            raise SchemaError(f"duplicate scene_id '{scene_id}'", path=path,
                              field=where + "scene_id")
        seen.add(scene_id)
        raw_seqs = _require(raw, "sequences", path, where, list)
        if not raw_seqs:
            raise SchemaError("scene needs at least one sequence", path=path,
                              field=where + "sequences")
        seqs = []
        conditions = set()
        for j, sraw in enumerate(raw_seqs):
            swhere = f"{where}sequences[{j}]."
            if not isinstance(sraw, dict):
                raise SchemaError("sequence must be a mapping", path=path, field=swhere[:-1])
            _check_keys(sraw, _SEQUENCE_KEYS, path, swhere[:-1])
            try:
                cond = ConditionKind.parse(_require(sraw, "condition", path, swhere))
            except ValueError:
                raise SchemaError(f"unknown condition '{sraw['condition']}'", path=path,
                                  field=swhere + "condition") from None
            if cond in conditions:
                raise SchemaError(f"condition '{cond.value}' listed twice", path=path,
                                  field=swhere + "condition")
            conditions.add(cond)
            fps = sraw.get("method_fps")
            if fps is not None and not isinstance(fps, (int, float)):
                raise SchemaError("method_fps must be a number", path=path,
                                  field=swhere + "method_fps")

            def opt(key):
                value = sraw.get(key)
                return None if value is None else root / str(value)

            seqs.append(SequenceSpec(
                condition=cond,
                gt_cloud=root / str(_require(sraw, "gt_cloud", path, swhere)),
                pred_cloud=opt("pred_cloud"),
                scene_graph=opt("scene_graph"),
                keyframes_dir=opt("keyframes_dir"),
                method_fps=None if fps is None else float(fps),
                scenario_config=opt("scenario_config"),
            ))
        scenes.append(SceneEntry(scene_id, tuple(seqs)))
    kind = doc.get("dataset_kind")
    return DatasetManifest(name, tuple(scenes), vocab, root, None if kind is None else str(kind))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    doc = read_structured(path)
    return manifest_from_dict(doc, path.resolve().parent, path=path)


def list_keyframes(keyframes_dir) -> list:
    """Image files in a keyframe directory, ordered by the first integer in the name."""
    keyframes_dir = Path(keyframes_dir)
    files = [p for p in keyframes_dir.iterdir()
             if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]

    def key(p):
        m = re.search(r"\d+", p.stem)
        return (int(m.group()) if m else -1, p.name)

    return sorted(files, key=key)
