"""Run configuration: one YAML file drives every CLI stage.

Every key below is optional except ``manifest``; unknown keys are rejected.
Relative paths resolve against the config file's directory::

    manifest: data/manifest.yaml        # dataset manifest (required)
    output_dir: out                     # default: <config dir>/out
    reference_condition: null           # degradation reference; null picks
                                        # baseline for ReplicaCAD-like data,
                                        # nominal_lights otherwise
    workers: 4                          # scene-level parallelism
    methods:                            # systems under test
      - name: ConceptGraphs
        pred_cloud: "preds/{scene}/{condition}.ply"   # default: manifest pred_cloud
        scene_graph: "graphs/{scene}/{condition}.json" # default: manifest scene_graph
        answers: null                   # pre-computed answers file (direct answering)
        label_names: null               # text file mapping pred ids to names;
                                        # null means ids already index the GT vocabulary
        pred_label_field: class_id
        fps: null                       # metadata only
    gateway:                            # see GatewayConfig
      mode: live                        # live | record | replay
      replay_dir: null
      model_id: gemini-2.0-flash
      ...
    seg:
      radius: 0.05                      # metres
      label_field: class_id
      matcher: exact                    # exact | embedding
      similarity_threshold: 0.7
      embedding_table: null             # JSON {label: vector}; required for embedding
    vqa:
      quotas: null                      # category -> ratio; null = default ratios
      n_total: null                     # null = dataset default (184 / 76 / 184)
      seed: 0
      max_object_share: 0.3
      sampling: {stride: 10}            # or {count: N}
      source_condition: null            # keyframes used for questions; null = reference
      generate_temperature: 0.4
      describe_temperature: 0.0
      validate_temperature: 0.0
      answer_temperature: 0.0
      include_functional: false
      exclude_judge_failures: false
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .conditions import ConditionKind
from .errors import BenchError, ConfigError
from .gateway import GatewayConfig
from .ingest.manifest import DatasetManifest, SequenceSpec, load_manifest, read_structured
from .labels import DEFAULT_SIMILARITY_THRESHOLD, MatchMode
from .seg_eval import DEFAULT_RADIUS
from .vqa.models import DEFAULT_N_TOTAL, DEFAULT_RATIOS, CategoryQuota
from .vqa.pipeline import SamplingPolicy

GATEWAY_MODES = ("live", "record", "replay")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    pred_cloud: Optional[str] = None
    scene_graph: Optional[str] = None
    answers: Optional[str] = None
    label_names: Optional[str] = None
    pred_label_field: str = "class_id"
    fps: Optional[float] = None


@dataclass(frozen=True)
class SegParams:
    radius: float = DEFAULT_RADIUS
    label_field: str = "class_id"
    matcher: MatchMode = MatchMode.EXACT
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    embedding_table: Optional[str] = None


@dataclass(frozen=True)
class VQAParams:
    quotas: dict = field(default_factory=lambda: dict(DEFAULT_RATIOS))
    n_total: Optional[int] = None
    seed: int = 0
    max_object_share: float = 0.3
    sampling: dict = field(default_factory=lambda: {"stride": 10})
    source_condition: Optional[ConditionKind] = None
    generate_temperature: float = 0.4
    describe_temperature: float = 0.0
    validate_temperature: float = 0.0
    answer_temperature: float = 0.0
    include_functional: bool = False
    exclude_judge_failures: bool = False

    @property
    def quota(self) -> CategoryQuota:
        return CategoryQuota(self.quotas)

    @property
    def sampling_policy(self) -> SamplingPolicy:
        return SamplingPolicy(**self.sampling)


@dataclass(frozen=True)
class RunConfig:
    manifest_path: Path
    output_dir: Path
    base_dir: Path
    methods: tuple = ()
    gateway: GatewayConfig = GatewayConfig()
    gateway_mode: str = "live"
    replay_dir: Optional[Path] = None
    seg: SegParams = SegParams()
    vqa: VQAParams = VQAParams()
    reference_condition: Optional[ConditionKind] = None
    workers: int = 4

    def manifest(self) -> DatasetManifest:
        try:
            return load_manifest(self.manifest_path)
        except OSError as exc:
            raise ConfigError(f"cannot read manifest {self.manifest_path}: {exc}") from None

    def reference_for(self, manifest: DatasetManifest) -> ConditionKind:
        if self.reference_condition is not None:
            return self.reference_condition
        return ConditionKind.BASELINE if _is_replica(manifest) else ConditionKind.NOMINAL_LIGHTS

    def n_total_for(self, manifest: DatasetManifest) -> int:
        if self.vqa.n_total is not None:
            return self.vqa.n_total
        kind = (manifest.dataset_kind or manifest.dataset_name or "").lower()
        for key, n in DEFAULT_N_TOTAL.items():
            if key in kind:
                return n
        return DEFAULT_N_TOTAL["replicacad"]

    def resolve(self, pattern: Optional[str], scene_id: str, condition: ConditionKind):
        if pattern is None:
            return None
        return self.base_dir / pattern.format(scene=scene_id, condition=condition.value)

    def pred_cloud(self, method: MethodSpec, scene_id: str, seq: SequenceSpec):
        return self.resolve(method.pred_cloud, scene_id, seq.condition) or seq.pred_cloud

    def scene_graph(self, method: MethodSpec, scene_id: str, seq: SequenceSpec):
        return self.resolve(method.scene_graph, scene_id, seq.condition) or seq.scene_graph

    def answers(self, method: MethodSpec, scene_id: str, seq: SequenceSpec):
        return self.resolve(method.answers, scene_id, seq.condition)


def _is_replica(manifest) -> bool:
    kind = (manifest.dataset_kind or manifest.dataset_name or "").lower()
    return "replica" in kind


def _build(cls, doc, where, convert=None):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"[{where}] must be a mapping")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"[{where}] unknown key(s): {', '.join(unknown)}")
    doc = dict(doc)
    try:
        for key, fn in (convert or {}).items():
            if doc.get(key) is not None:
                doc[key] = fn(doc[key])
        return cls(**{k: v for k, v in doc.items() if v is not None or k in _NULLABLE})
    except (TypeError, ValueError, BenchError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


_NULLABLE = {"pred_cloud", "scene_graph", "answers", "label_names", "fps", "n_total",
             "source_condition", "requests_per_minute", "embedding_table"}
_TOP_KEYS = {"manifest", "output_dir", "methods", "gateway", "seg", "vqa",
             "reference_condition", "workers"}


def config_from_dict(doc, base_dir) -> RunConfig:
    base_dir = Path(base_dir)
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    if not doc.get("manifest"):
        raise ConfigError("'manifest' is required")

    raw_methods = doc.get("methods") or []
    if not isinstance(raw_methods, list):
        raise ConfigError("'methods' must be a list")
    methods = tuple(_build(MethodSpec, m, f"methods[{i}]") for i, m in enumerate(raw_methods))
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ConfigError("method names must be unique")

    gw_doc = dict(doc.get("gateway") or {})
    mode = gw_doc.pop("mode", "live")
    if mode not in GATEWAY_MODES:
        raise ConfigError(f"[gateway] mode must be one of {', '.join(GATEWAY_MODES)}")
    replay_dir = gw_doc.pop("replay_dir", None)
    gateway = _build(GatewayConfig, gw_doc, "gateway")

    seg = _build(SegParams, doc.get("seg"), "seg", {"matcher": MatchMode})
    if seg.matcher is MatchMode.EMBEDDING and seg.embedding_table is None:
        raise ConfigError("[seg] matcher 'embedding' needs an embedding_table")
    if seg.embedding_table is not None:
        seg = dataclasses.replace(seg, embedding_table=str(base_dir / seg.embedding_table))
    vqa = _build(VQAParams, doc.get("vqa"), "vqa", {"source_condition": ConditionKind.parse})
    try:
        vqa.quota, vqa.sampling_policy
    except (TypeError, ValueError, BenchError) as exc:
        raise ConfigError(f"[vqa] {exc}") from None
    if not 0 < vqa.max_object_share <= 1:
        raise ConfigError("[vqa] max_object_share must lie in (0, 1]")

    ref = doc.get("reference_condition")
    try:
        ref = None if ref is None else ConditionKind.parse(ref)
    except ValueError as exc:
        raise ConfigError(f"[reference_condition] {exc}") from None
    workers = doc.get("workers", 4)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("'workers' must be a positive integer")

    return RunConfig(
        manifest_path=base_dir / str(doc["manifest"]),
        output_dir=base_dir / str(doc.get("output_dir") or "out"),
        base_dir=base_dir,
        methods=methods,
        gateway=gateway,
        gateway_mode=mode,
        replay_dir=None if replay_dir is None else base_dir / str(replay_dir),
        seg=seg,
        vqa=vqa,
        reference_condition=ref,
        workers=workers,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = read_structured(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except BenchError as exc:
        raise ConfigError(str(exc)) from None
    return config_from_dict(doc, path.resolve().parent)
