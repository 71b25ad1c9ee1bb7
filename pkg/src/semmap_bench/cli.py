"""Command-line front end: ``semmap-bench <command> --config run.yaml``.

Every stage writes into ``<output_dir>/<stage>.partial`` and swaps the
directory into place only after the whole stage succeeded, so a failed run
leaves the previous complete outputs untouched and keeps its partial files
for inspection.

Exit status: 0 success, 1 fatal data issues or stage failure, 2 bad config.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .answer_eval import (AccuracyTable, AnswerSettings, answer_all, compute_accuracy,
                          load_answers, load_verdicts, judge_all, store_answers, store_verdicts)
from .conditions import ConditionKind
from .config import RunConfig, load_config
from .errors import BenchError, ConfigError, IngestError
from .gateway import Gateway
from .ingest.cloud import VOID, LabeledPointCloud, load_point_cloud
from .ingest.scene_graph import load_scene_graph
from .ingest.validate import Issue, validate_sequence
from .labels import ClassVocabulary, LabelMatcher, TableEmbeddingProvider, match_labels
from .records import atomic_write_text
from .report import accuracy_tables, build_report
from .scenario import emit_condition_config, write_condition_config
from .seg_eval import aggregate_conditions, evaluate_clouds, read_result, write_result
from .templates import template_hashes
from .vqa import pipeline
from .vqa.store import QASet, load_qa_set, store_qa_set

logger = logging.getLogger("semmap_bench")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
ALL_TEMPLATES = pipeline.TEMPLATE_NAMES + ("answer_from_graph", "judge_answer")


def _dump_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


@contextmanager
def staged(final: Path):
    """Yield a scratch directory that replaces ``final`` only on success."""
    partial = final.with_name(final.name + ".partial")
    if partial.exists():
        shutil.rmtree(partial)
    partial.mkdir(parents=True)
    yield partial
    old = final.with_name(final.name + ".old")
    if old.exists():
        shutil.rmtree(old)
    if final.exists():
        final.rename(old)
    partial.rename(final)
    if old.exists():
        shutil.rmtree(old)


class Context:
    """Parsed config plus the command-line overrides shared by all commands."""

    def __init__(self, cfg: RunConfig, args, transport=None):
        self.cfg = cfg
        self.workers = args.workers or cfg.workers
        self.manifest = cfg.manifest()
        self.reference = cfg.reference_for(self.manifest)
        mode = cfg.gateway_mode
        replay_dir = Path(args.replay_dir) if args.replay_dir else cfg.replay_dir
        if args.record:
            mode = "record"
        elif args.replay_dir:
            mode = "replay"
        if mode != "live" and replay_dir is None:
            raise ConfigError(f"gateway mode '{mode}' needs a replay directory")
        self.gateway_mode = mode
        self.replay_dir = replay_dir
        self._transport = transport
        self._gateway = None
        self._lock = threading.Lock()

    @property
    def gateway(self) -> Gateway:
        with self._lock:
            if self._gateway is None:
                self._gateway = self.cfg.gateway.build(self.gateway_mode, self.replay_dir,
                                                       self._transport)
        return self._gateway

    @property
    def vqa_settings(self) -> pipeline.VQASettings:
        v = self.cfg.vqa
        return pipeline.VQASettings(self.cfg.gateway.model_id, v.describe_temperature,
                                    v.generate_temperature, v.validate_temperature,
                                    workers=self.workers)

    @property
    def answer_settings(self) -> AnswerSettings:
        v = self.cfg.vqa
        return AnswerSettings(self.cfg.gateway.model_id, v.answer_temperature,
                              workers=self.workers, include_functional=v.include_functional,
                              exclude_judge_failures=v.exclude_judge_failures)

    def out(self, *parts) -> Path:
        return self.cfg.output_dir.joinpath(*parts)

    def vocabulary(self) -> ClassVocabulary:
        try:
            return ClassVocabulary.from_file(self.manifest.class_vocabulary_path)
        except OSError as exc:
            raise IngestError(f"cannot read class vocabulary: {exc}") from None

    def source_sequence(self, scene):
        """Sequence whose keyframes feed question generation."""
        wanted = self.cfg.vqa.source_condition or self.reference
        seq = scene.sequence(wanted)
        if seq is not None and seq.keyframes_dir is not None:
            return seq
        for seq in scene.sequences:
            if seq.keyframes_dir is not None:
                return seq
        raise IngestError(f"scene {scene.scene_id} has no sequence with keyframes")

    def pool_map(self, fn, items):
        with ThreadPoolExecutor(max(1, self.workers)) as pool:
            return list(pool.map(fn, items))


# --- validate --------------------------------------------------------------

def cmd_validate(ctx: Context, args) -> int:
    found = []  # (where, Issue)
    manifest = ctx.manifest
    num_classes = None
    try:
        num_classes = len(ctx.vocabulary())
    except BenchError as exc:
        found.append(("manifest", Issue("InvalidVocabulary", str(exc))))
    if not manifest.scenes:
        found.append(("manifest", Issue("EmptyManifest", "manifest lists no scenes")))
    for scene in manifest.scenes:
        for seq in scene.sequences:
            where = f"{scene.scene_id}/{seq.condition.value}"
            for issue in validate_sequence(seq, label_field=ctx.cfg.seg.label_field,
                                           num_classes=num_classes):
                found.append((where, issue))
    for method in ctx.cfg.methods:
        resolved = False
        for scene in manifest.scenes:
            for seq in scene.sequences:
                paths = (ctx.cfg.pred_cloud(method, scene.scene_id, seq),
                         ctx.cfg.scene_graph(method, scene.scene_id, seq),
                         ctx.cfg.answers(method, scene.scene_id, seq))
                resolved = resolved or any(p is not None and p.is_file() for p in paths)
        if manifest.scenes and not resolved:
            found.append((f"method {method.name}",
                          Issue("UnresolvedMethod", "no prediction, scene graph or answers "
                                                    "file found for any sequence")))
    for where, issue in found:
        print(f"{where}: {issue}")
    fatal = sum(issue.fatal for _, issue in found)
    print(f"{len(found)} issue(s), {fatal} fatal")
    return EXIT_FAIL if fatal else EXIT_OK


# --- seg-eval --------------------------------------------------------------

def _label_map(method, vocab, cfg):
    """Prediction id -> GT class index, or None when ids already match."""
    if method.label_names is None:
        return None
    path = cfg.base_dir / method.label_names
    names = [n.strip() for n in path.read_text(encoding="utf-8").splitlines()]
    provider = None
    if cfg.seg.embedding_table is not None:
        provider = TableEmbeddingProvider(json.loads(Path(cfg.seg.embedding_table)
                                                     .read_text(encoding="utf-8")))
    matcher = LabelMatcher(cfg.seg.matcher, provider, cfg.seg.similarity_threshold)
    return np.array([VOID if m is None else m for m in match_labels(names, vocab, matcher)],
                    dtype=np.int64)


def _remap(cloud: LabeledPointCloud, lut) -> LabeledPointCloud:
    if lut is None:
        return cloud
    ids = cloud.class_ids
    mapped = np.full(ids.shape, VOID, dtype=np.int64)
    ok = (ids >= 0) & (ids < len(lut))
    mapped[ok] = lut[ids[ok]]
    return LabeledPointCloud(cloud.points, mapped, cloud.instance_ids)


def cmd_seg_eval(ctx: Context, args) -> int:
    cfg = ctx.cfg
    vocab = ctx.vocabulary()
    if not cfg.methods:
        raise ConfigError("no methods configured")
    luts = {m.name: _label_map(m, vocab, cfg) for m in cfg.methods}
    tasks, omitted = [], []
    for method in cfg.methods:
        for scene in ctx.manifest.scenes:
            for seq in scene.sequences:
                pred = cfg.pred_cloud(method, scene.scene_id, seq)
                if pred is None or not pred.is_file():
                    omitted.append({"method": method.name, "scene": scene.scene_id,
                                    "condition": seq.condition.value,
                                    "reason": "missing prediction"})
                    continue
                tasks.append((method, scene.scene_id, seq, pred))

    def run(task):
        method, scene_id, seq, pred_path = task
        try:
            gt = load_point_cloud(seq.gt_cloud, cfg.seg.label_field, len(vocab))
            lut = luts[method.name]
            pred = load_point_cloud(pred_path, method.pred_label_field,
                                    None if lut is not None else len(vocab))
            params = {"matcher": cfg.seg.matcher.value, "label_field": cfg.seg.label_field}
            return evaluate_clouds(gt, _remap(pred, lut), len(vocab), seq.condition, scene_id,
                                   method.name, cfg.seg.radius, params), None
        except (BenchError, OSError, ValueError) as exc:
            logger.error("%s %s/%s: %s", method.name, scene_id, seq.condition.value, exc)
            return None, {"method": method.name, "scene": scene_id,
                          "condition": seq.condition.value, "reason": str(exc)}

    outcomes = ctx.pool_map(run, tasks)
    results = [r for r, _ in outcomes if r is not None]
    failures = [f for _, f in outcomes if f is not None]
    with staged(ctx.out("seg")) as tmp:
        for r in results:
            write_result(tmp / r.method / r.scene_id / f"{r.condition.value}.json", r)
        summary = {"omitted": omitted, "failed": failures, "aggregates": []}
        if results:
            for (method, metric), a in aggregate_conditions(results).items():
                summary["aggregates"].append({
                    "method": method, "metric": metric, "min": a.minimum, "max": a.maximum,
                    "avg": a.average,
                    "per_condition": {c.value: v for c, v in sorted(a.per_condition.items())}})
        _dump_json(tmp / "summary.json", summary)
    for o in omitted:
        print(f"omitted {o['method']} {o['scene']}/{o['condition']}: {o['reason']}")
    print(f"{len(results)} result(s), {len(omitted)} omitted, {len(failures)} failed")
    return EXIT_FAIL if failures and not results else EXIT_OK


# --- qa stages -------------------------------------------------------------

def _qa_header(ctx, scene_id, condition):
    cfg = ctx.cfg
    return {"dataset": ctx.manifest.dataset_name, "scene": scene_id,
            "condition": condition.value, "quotas": cfg.vqa.quota.to_dict(),
            "seed": cfg.vqa.seed, "template_hashes": template_hashes(pipeline.TEMPLATE_NAMES),
            "model_id": cfg.gateway.model_id}


def cmd_qa_gen(ctx: Context, args) -> int:
    settings = ctx.vqa_settings
    n_total = ctx.cfg.n_total_for(ctx.manifest)
    policy = ctx.cfg.vqa.sampling_policy

    with staged(ctx.out("qa_gen")) as tmp:
        def run(scene):
            seq = ctx.source_sequence(scene)
            frames = pipeline.sample_keyframes(seq, policy, scene.scene_id)
            descs = pipeline.describe_frames(frames, ctx.gateway, settings)
            unified = pipeline.aggregate_descriptions(descs)
            atomic_write_text(tmp / f"{scene.scene_id}.description.txt", unified)
            result = pipeline.generate_questions(unified, ctx.cfg.vqa.quota, n_total,
                                                 ctx.cfg.vqa.seed, ctx.gateway, frames,
                                                 settings)
            store_qa_set(result.items, tmp / f"{scene.scene_id}.jsonl",
                         _qa_header(ctx, scene.scene_id, seq.condition))
            summary = {"requested": {c.value: n for c, n in result.requested.items()},
                       "produced": {c.value: n for c, n in result.produced.items()},
                       "shortfall": result.shortfall, "frames": [f.frame_id for f in frames]}
            _dump_json(tmp / f"{scene.scene_id}.summary.json", summary)
            return scene.scene_id, len(result.items), result.shortfall

        for scene_id, n, shortfall in ctx.pool_map(run, ctx.manifest.scenes):
            note = f", shortfall {shortfall}" if shortfall else ""
            print(f"{scene_id}: {n} question(s) generated{note}")
    return EXIT_OK


def cmd_qa_validate(ctx: Context, args) -> int:
    settings = ctx.vqa_settings
    src = ctx.out("qa_gen")
    policy = ctx.cfg.vqa.sampling_policy
    share = ctx.cfg.vqa.max_object_share

    with staged(ctx.out("qa_validated")) as tmp:
        def run(scene):
            qa = load_qa_set(src / f"{scene.scene_id}.jsonl")
            unified = (src / f"{scene.scene_id}.description.txt").read_text(encoding="utf-8")
            frames = pipeline.sample_keyframes(ctx.source_sequence(scene), policy,
                                               scene.scene_id)
            checked = pipeline.validate_questions(qa.items, unified, frames, ctx.gateway,
                                                  settings)
            balanced = pipeline.balance_questions(checked, share)
            header = {**qa.header, "max_object_share": share,
                      "category_counts": pipeline.category_counts(balanced)}
            out = QASet(balanced, header)
            store_qa_set(out, tmp / f"{scene.scene_id}.jsonl")
            return scene.scene_id, len(out.validated), len(balanced)

        for scene_id, kept, total in ctx.pool_map(run, ctx.manifest.scenes):
            print(f"{scene_id}: {kept} of {total} question(s) kept")
    return EXIT_OK


def _validated_set(ctx, scene_id) -> QASet:
    return load_qa_set(ctx.out("qa_validated", f"{scene_id}.jsonl"))


def cmd_qa_answer(ctx: Context, args) -> int:
    settings = ctx.answer_settings
    tasks, skipped = [], []
    for method in ctx.cfg.methods:
        for scene in ctx.manifest.scenes:
            for seq in scene.sequences:
                tasks.append((method, scene.scene_id, seq))

    with staged(ctx.out("answers")) as tmp:
        def run(task):
            method, scene_id, seq = task
            qa = _validated_set(ctx, scene_id)
            given = ctx.cfg.answers(method, scene_id, seq)
            graph_path = ctx.cfg.scene_graph(method, scene_id, seq)
            if given is not None and given.is_file():
                _, answers = load_answers(given)
                header = {"source": "direct"}
            elif graph_path is not None and graph_path.is_file():
                answers = answer_all(load_scene_graph(graph_path), qa.validated, ctx.gateway,
                                     settings)
                header = {"source": "scene_graph", "model_id": settings.model_id,
                          "temperature": settings.answer_temperature}
            else:
                return f"{method.name} {scene_id}/{seq.condition.value}: no scene graph"
            header.update(method=method.name, scene=scene_id, condition=seq.condition.value)
            store_answers(answers, tmp / method.name / scene_id / f"{seq.condition.value}.jsonl",
                          header)
            return None

        skipped = [s for s in ctx.pool_map(run, tasks) if s]
    for s in skipped:
        print(f"skipped {s}")
    print(f"{len(tasks) - len(skipped)} answer file(s) written")
    return EXIT_OK


def _accuracy_by_method(ctx, verdict_root: Path) -> dict:
    """Micro-averaged accuracy per method from stored verdict files."""
    out = {}
    for method in ctx.cfg.methods:
        table = AccuracyTable()
        for scene in ctx.manifest.scenes:
            qa = None
            for seq in scene.sequences:
                path = verdict_root / method.name / scene.scene_id / f"{seq.condition.value}.jsonl"
                if not path.is_file():
                    continue
                qa = qa or _validated_set(ctx, scene.scene_id)
                _, verdicts = load_verdicts(path)
                table = table.merge(compute_accuracy(
                    verdicts, qa.items, seq.condition, ctx.cfg.vqa.include_functional,
                    ctx.cfg.vqa.exclude_judge_failures))
        if table.cells:
            out[method.name] = table
    return out


def cmd_qa_eval(ctx: Context, args) -> int:
    settings = ctx.answer_settings
    src = ctx.out("answers")
    tasks = []
    for method in ctx.cfg.methods:
        for scene in ctx.manifest.scenes:
            for seq in scene.sequences:
                path = src / method.name / scene.scene_id / f"{seq.condition.value}.jsonl"
                if path.is_file():
                    tasks.append((method, scene.scene_id, seq.condition, path))

    with staged(ctx.out("qa_eval")) as tmp:
        def run(task):
            method, scene_id, cond, path = task
            qa = _validated_set(ctx, scene_id)
            _, answers = load_answers(path)
            verdicts = judge_all(qa.validated, answers, ctx.gateway, settings)
            store_verdicts(verdicts, tmp / method.name / scene_id / f"{cond.value}.jsonl",
                           {"method": method.name, "scene": scene_id,
                            "condition": cond.value, "model_id": settings.model_id})

        ctx.pool_map(run, tasks)
        tables = _accuracy_by_method(ctx, tmp)
        for t in accuracy_tables(tables):
            atomic_write_text(tmp / f"{t.name}.csv", t.to_csv())
    for method, table in sorted(tables.items()):
        for cat, cond, n, k, acc in table.rows():
            print(f"{method} {cat.value} {cond.value}: {k}/{n} = {acc:.3f}")
    return EXIT_OK


# --- report ----------------------------------------------------------------

def _run_metadata(ctx) -> dict:
    cfg = ctx.cfg
    v = cfg.vqa
    return {
        "dataset": ctx.manifest.dataset_name,
        "reference_condition": ctx.reference.value,
        "model_id": cfg.gateway.model_id,
        "gateway_mode": ctx.gateway_mode,
        "temperatures": {"describe": v.describe_temperature, "generate": v.generate_temperature,
                         "validate": v.validate_temperature, "answer": v.answer_temperature,
                         "judge": 0.0},
        "template_hashes": template_hashes(ALL_TEMPLATES),
        "seed": v.seed,
        "n_total": cfg.n_total_for(ctx.manifest),
        "quotas": v.quota.to_dict(),
        "max_object_share": v.max_object_share,
        "radius_m": cfg.seg.radius,
        "label_matcher": cfg.seg.matcher.value,
        "include_functional": v.include_functional,
        "version": __version__,
    }


def cmd_report(ctx: Context, args) -> int:
    seg_dir = ctx.out("seg")
    results = []
    if seg_dir.is_dir():
        for path in sorted(seg_dir.glob("*/*/*.json")):
            results.append(read_result(path))
    accuracy = _accuracy_by_method(ctx, ctx.out("qa_eval")) if ctx.out("qa_eval").is_dir() else {}
    if not results and not accuracy:
        raise IngestError("no result files found; run seg-eval or qa-eval first")
    fps = {m.name: m.fps for m in ctx.cfg.methods if m.fps is not None}
    report = build_report(results, accuracy, ctx.reference, fps, _run_metadata(ctx))
    with staged(ctx.out("report")) as tmp:
        report.write(tmp)
    print(f"report written to {ctx.out('report')}")
    return EXIT_OK


# --- scenario-emit ---------------------------------------------------------

def cmd_scenario_emit(args, cfg=None) -> int:
    kinds = [ConditionKind.parse(c) for c in args.condition] if args.condition else list(
        ConditionKind)
    if args.out:
        out = Path(args.out)
    elif cfg is not None:
        out = cfg.output_dir / "scenarios"
    else:
        raise ConfigError("scenario-emit needs --out or --config")
    for kind in kinds:
        doc = emit_condition_config(kind)
        for w in doc.warnings():
            logger.warning("%s", w)
        path = out / f"{kind.value}.yaml"
        write_condition_config(path, doc)
        print(f"wrote {path}")
    return EXIT_OK


# --- entry point -----------------------------------------------------------

COMMANDS = {
    "validate": cmd_validate,
    "seg-eval": cmd_seg_eval,
    "qa-gen": cmd_qa_gen,
    "qa-validate": cmd_qa_validate,
    "qa-answer": cmd_qa_answer,
    "qa-eval": cmd_qa_eval,
    "report": cmd_report,
}

HELP = {
    "validate": "check the manifest, vocabulary and method files",
    "seg-eval": "score predicted clouds against ground truth",
    "qa-gen": "describe keyframes and generate candidate questions",
    "qa-validate": "filter and balance generated questions",
    "qa-answer": "answer validated questions from each method's scene graph",
    "qa-eval": "judge answers and compute per-category accuracy",
    "report": "render result tables and run metadata",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semmap-bench",
                                     description="Open semantic mapping benchmark harness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (YAML)")
    common.add_argument("--workers", type=int, default=None,
                        help="scene-level worker threads (overrides config)")
    common.add_argument("--replay-dir", default=None,
                        help="replay store; without --record, runs fully offline")
    common.add_argument("--record", action="store_true",
                        help="call the live endpoint and record responses into the replay store")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in HELP.items():
        sub.add_parser(name, parents=[common], help=text)
    emit = sub.add_parser("scenario-emit", parents=[common],
                          help="write condition documents for external simulators")
    emit.add_argument("--condition", action="append", help="repeatable; default: all five")
    emit.add_argument("--out", help="output directory (default <output_dir>/scenarios)")
    return parser


def main(argv=None, transport=None) -> int:
    """Run one command. ``transport`` replaces the HTTP transport (tests, offline demos)."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config) if args.config else None
        if args.command == "scenario-emit":
            return cmd_scenario_emit(args, cfg)
        if cfg is None:
            raise ConfigError("--config is required")
        ctx = Context(cfg, args, transport)
    except BenchError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](ctx, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BenchError, OSError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        logger.error("partial outputs, if any, are kept under %s/*.partial",
                     ctx.cfg.output_dir)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
