import json

import numpy as np
import pytest
import yaml

from demo_support import DEMO, demo_config, load_world
from fake_llm import FakeLLMTransport
from semmap_bench.cli import main
from semmap_bench.ingest.cloud import LabeledPointCloud, write_point_cloud
from semmap_bench.scenario import load_condition_config
from semmap_bench.seg_eval import read_result
from semmap_bench.vqa.store import load_qa_set
from stubs import FailOnUseTransport

QA_STAGES = ("qa-gen", "qa-validate", "qa-answer", "qa-eval")


def run(cfg, *stages, transport=None, extra=()):
    transport = transport or FailOnUseTransport()
    codes = [main([s, "--config", str(cfg), *extra], transport=transport) for s in stages]
    return codes[0] if len(codes) == 1 else codes


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def small_dataset(tmp_path, gt, pred, conditions=("baseline",), classes=("wall", "floor")):
    """Single-scene manifest plus config; pred None leaves the prediction out."""
    (tmp_path / "classes.txt").write_text("\n".join(classes) + "\n")
    seqs = []
    for cond in conditions:
        write_point_cloud(tmp_path / f"{cond}_gt.ply", gt)
        if pred is not None:
            write_point_cloud(tmp_path / "pred" / f"{cond}.ply", pred)
        seqs.append({"condition": cond, "gt_cloud": f"{cond}_gt.ply"})
    manifest = {"dataset_name": "tiny-replicacad", "class_vocabulary_path": "classes.txt",
                "scenes": [{"scene_id": "s0", "sequences": seqs}]}
    (tmp_path / "manifest.yaml").write_text(yaml.safe_dump(manifest))
    cfg = {"manifest": "manifest.yaml", "output_dir": "out",
           "methods": [{"name": "M", "pred_cloud": "pred/{condition}.ply"}]}
    (tmp_path / "run.yaml").write_text(yaml.safe_dump(cfg))
    return tmp_path / "run.yaml"


def two_class_clouds():
    pts = np.array([[i, 0, 0] for i in range(6)], dtype=np.float32)
    gt = LabeledPointCloud(pts, np.array([0, 0, 0, 1, 1, 1]))
    pred = LabeledPointCloud(pts, np.array([0, 0, 1, 1, 1, 1]))
    return gt, pred


# --- validate --------------------------------------------------------------

def test_validate_demo_ok(tmp_path, capsys):
    assert run(demo_config(tmp_path), "validate") == 0
    assert "0 fatal" in capsys.readouterr().out


def test_validate_missing_gt(tmp_path, capsys):
    gt, pred = two_class_clouds()
    cfg = small_dataset(tmp_path, gt, pred)
    (tmp_path / "baseline_gt.ply").unlink()
    assert run(cfg, "validate") == 1
    assert "MissingGroundTruth" in capsys.readouterr().out


def test_validate_empty_manifest(tmp_path, capsys):
    (tmp_path / "classes.txt").write_text("wall\n")
    (tmp_path / "manifest.yaml").write_text(
        "dataset_name: x\nclass_vocabulary_path: classes.txt\nscenes: []\n")
    (tmp_path / "run.yaml").write_text("manifest: manifest.yaml\n")
    assert run(tmp_path / "run.yaml", "validate") == 1
    assert "EmptyManifest" in capsys.readouterr().out


def test_validate_unresolved_method(tmp_path, capsys):
    gt, _ = two_class_clouds()
    cfg = small_dataset(tmp_path, gt, None)
    assert run(cfg, "validate") == 1
    assert "UnresolvedMethod" in capsys.readouterr().out


@pytest.mark.parametrize("text", ["manifest: m.yaml\nbogus: 1\n", "seg: {radius: 1, x: 2}\n",
                                  "methods: [1]\n", "manifest: [unclosed\n"])
def test_bad_config_exit_2(tmp_path, text):
    (tmp_path / "run.yaml").write_text(text)
    assert run(tmp_path / "run.yaml", "validate") == 2


def test_missing_config_exit_2(tmp_path):
    assert run(tmp_path / "nope.yaml", "validate") == 2


def test_record_needs_replay_dir(tmp_path):
    gt, pred = two_class_clouds()
    cfg = small_dataset(tmp_path, gt, pred)
    assert run(cfg, "validate", extra=("--record",)) == 2


# --- seg-eval --------------------------------------------------------------

def test_seg_eval_identity(tmp_path):
    gt, _ = two_class_clouds()
    cfg = small_dataset(tmp_path, gt, gt)
    assert run(cfg, "seg-eval") == 0
    r = read_result(tmp_path / "out" / "seg" / "M" / "s0" / "baseline.json")
    assert r.macc == 1.0 and r.fmiou == 1.0
    assert r.per_class_iou == (1.0, 1.0)


def test_seg_eval_two_class(tmp_path):
    gt, pred = two_class_clouds()
    cfg = small_dataset(tmp_path, gt, pred)
    assert run(cfg, "seg-eval") == 0
    r = read_result(tmp_path / "out" / "seg" / "M" / "s0" / "baseline.json")
    assert r.macc == pytest.approx(0.8333333333, abs=1e-9)
    assert r.fmiou == pytest.approx(0.7083333333, abs=1e-9)
    assert r.confusion.counts.tolist() == [[2, 1], [0, 3]]


def test_seg_eval_missing_prediction_noted(tmp_path, capsys):
    gt, pred = two_class_clouds()
    cfg = small_dataset(tmp_path, gt, pred, conditions=("baseline", "velocity"))
    (tmp_path / "pred" / "velocity.ply").unlink()
    assert run(cfg, "seg-eval") == 0
    summary = json.loads((tmp_path / "out" / "seg" / "summary.json").read_text())
    assert summary["omitted"] == [{"method": "M", "scene": "s0", "condition": "velocity",
                                   "reason": "missing prediction"}]
    assert not (tmp_path / "out" / "seg" / "M" / "s0" / "velocity.json").exists()
    assert "omitted M s0/velocity" in capsys.readouterr().out


def test_seg_eval_unreadable_prediction_continues(tmp_path):
    gt, pred = two_class_clouds()
    cfg = small_dataset(tmp_path, gt, pred, conditions=("baseline", "velocity"))
    (tmp_path / "pred" / "velocity.ply").write_bytes(b"not a ply")
    assert run(cfg, "seg-eval") == 0
    summary = json.loads((tmp_path / "out" / "seg" / "summary.json").read_text())
    assert [f["condition"] for f in summary["failed"]] == ["velocity"]
    assert (tmp_path / "out" / "seg" / "M" / "s0" / "baseline.json").exists()


def test_seg_eval_label_names_remap(tmp_path):
    gt, pred = two_class_clouds()
    swapped = LabeledPointCloud(pred.points, 1 - pred.class_ids)
    cfg = small_dataset(tmp_path, gt, swapped)
    (tmp_path / "names.txt").write_text("Floor\nWALL\n")
    doc = yaml.safe_load(cfg.read_text())
    doc["methods"][0]["label_names"] = "names.txt"
    cfg.write_text(yaml.safe_dump(doc))
    assert run(cfg, "seg-eval") == 0
    r = read_result(tmp_path / "out" / "seg" / "M" / "s0" / "baseline.json")
    assert r.macc == pytest.approx(5 / 6)


def test_seg_eval_demo_label_names(tmp_path):
    assert run(demo_config(tmp_path), "seg-eval") == 0
    r = read_result(tmp_path / "out" / "seg" / "MapperB" / "apt_0" / "baseline.json")
    assert 0.5 < r.macc < 1.0  # reversed, upper-cased label list mapped back


# --- qa stages -------------------------------------------------------------

def test_qa_pipeline_replay_byte_identical(tmp_path):
    trees = []
    for out in ("a", "b"):
        cfg = demo_config(tmp_path, out)
        assert run(cfg, *QA_STAGES) == [0, 0, 0, 0]
        trees.append(tree_bytes(tmp_path / out))
    assert trees[0] == trees[1]
    assert any(k.startswith("qa_eval/") for k in trees[0])


def test_qa_gen_n_total_24(tmp_path):
    cfg = demo_config(tmp_path, gateway={"mode": "live"})
    assert run(cfg, "qa-gen", transport=FakeLLMTransport(load_world())) == 0
    qa = load_qa_set(tmp_path / "out" / "qa_gen" / "apt_0.jsonl")
    assert len(qa) == 24
    assert qa.header["seed"] == 0 and qa.header["condition"] == "baseline"
    summary = json.loads((tmp_path / "out" / "qa_gen" / "apt_0.summary.json").read_text())
    assert sum(summary["requested"].values()) == 24 and summary["shortfall"] == {}


def test_qa_validate_balances_and_reports(tmp_path):
    cfg = demo_config(tmp_path)
    assert run(cfg, "qa-gen", "qa-validate") == [0, 0]
    qa = load_qa_set(tmp_path / "out" / "qa_validated" / "apt_0.jsonl")
    reasons = {it.reason for it in qa.items if it.rejected}
    assert any(r.startswith("over-represented object") for r in reasons)
    assert "ambiguous" in reasons
    n = len(qa.validated)
    for obj in {o for it in qa.validated for o in it.referenced_objects}:
        assert sum(obj in it.referenced_objects for it in qa.validated) <= max(1, 0.3 * n)
    assert sum(qa.header["category_counts"].values()) == n


def test_qa_eval_all_correct(tmp_path):
    cfg = demo_config(tmp_path)
    assert run(cfg, "qa-gen", "qa-validate") == [0, 0]
    answers_dir = tmp_path / "given"
    for scene in ("apt_0", "apt_1"):
        qa = load_qa_set(tmp_path / "out" / "qa_validated" / f"{scene}.jsonl")
        lines = [json.dumps({"kind": "answers", "version": 1})]
        lines += [json.dumps({"qa_id": it.qa_id, "answer": it.gt_answer,
                              "answered_by": "direct"}) for it in qa.validated]
        (answers_dir / scene).mkdir(parents=True)
        (answers_dir / scene / "baseline.jsonl").write_text("\n".join(lines) + "\n")
    doc = yaml.safe_load(cfg.read_text())
    doc["methods"] = [{"name": "Oracle", "answers": str(answers_dir / "{scene}/{condition}.jsonl")}]
    doc["gateway"] = {"mode": "live"}
    cfg.write_text(yaml.safe_dump(doc))
    fake = FakeLLMTransport(load_world())
    assert run(cfg, "qa-answer", "qa-eval", transport=fake) == [0, 0]
    csv_text = (tmp_path / "out" / "qa_eval" / "vqa_counts.csv").read_text()
    rows = [r.split(",") for r in csv_text.strip().splitlines()[1:]]
    assert rows and all(r[-1] == "1.000" for r in rows)


def test_stage_failure_keeps_previous_outputs(tmp_path):
    cfg = demo_config(tmp_path)
    assert run(cfg, "qa-gen", "qa-validate", "qa-answer") == [0, 0, 0]
    before = tree_bytes(tmp_path / "out" / "answers")
    empty = tmp_path / "empty_replay"
    empty.mkdir()
    assert run(cfg, "qa-answer", extra=("--replay-dir", str(empty))) == 1
    assert tree_bytes(tmp_path / "out" / "answers") == before
    assert (tmp_path / "out" / "answers.partial").is_dir()
    # a later successful run cleans up after itself
    assert run(cfg, "qa-answer") == 0
    assert not (tmp_path / "out" / "answers.partial").exists()


def test_workers_flag_does_not_change_outputs(tmp_path):
    a = demo_config(tmp_path, "a")
    b = demo_config(tmp_path, "b")
    assert run(a, "seg-eval", "qa-gen", extra=("--workers", "1")) == [0, 0]
    assert run(b, "seg-eval", "qa-gen", extra=("--workers", "8")) == [0, 0]
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


# --- report ----------------------------------------------------------------

def test_report_end_to_end(tmp_path):
    cfg = demo_config(tmp_path)
    assert run(cfg, "seg-eval", *QA_STAGES, "report") == [0] * 6
    out = tmp_path / "out" / "report"
    names = sorted(p.name for p in out.iterdir())
    assert names == ["degradation_fmiou.csv", "degradation_macc.csv", "metadata.json",
                     "report.md", "segmentation_fmiou.csv", "segmentation_macc.csv",
                     "vqa_accuracy.csv", "vqa_counts.csv"]
    meta = json.loads((out / "metadata.json").read_text())["metadata"]
    assert meta["model_id"] == "gemini-2.0-flash"
    assert meta["temperatures"]["judge"] == 0.0
    assert meta["radius_m"] == 0.05 and meta["label_matcher"] == "exact"
    assert len(meta["template_hashes"]) == 14
    text = (out / "report.md").read_text()
    assert "Run metadata" in text and "D(%) vs Baseline" in text


def test_report_cells_match_result_files(tmp_path):
    cfg = demo_config(tmp_path)
    assert run(cfg, "seg-eval", "report") == [0, 0]
    seg = tmp_path / "out" / "seg"
    rows = (tmp_path / "out" / "report" / "segmentation_macc.csv").read_text().splitlines()
    header = rows[0].split(",")
    for row in rows[1:]:
        cells = dict(zip(header, row.split(",")))
        for cond, title in (("baseline", "Baseline"), ("camera_light", "Camera Light")):
            values = [read_result(p).macc for p in seg.glob(f"{cells['Method']}/*/{cond}.json")]
            assert float(cells[title]) == pytest.approx(sum(values) / len(values), abs=5e-4)


def test_report_baseline_only_degradation(tmp_path):
    gt, pred = two_class_clouds()
    cfg = small_dataset(tmp_path, gt, pred)
    assert run(cfg, "seg-eval", "report") == [0, 0]
    rows = (tmp_path / "out" / "report" / "degradation_macc.csv").read_text().splitlines()
    assert rows == ["Method,Baseline", "M,0.00"]


def test_report_missing_reference_omits_degradation(tmp_path):
    gt, pred = two_class_clouds()
    cfg = small_dataset(tmp_path, gt, pred, conditions=("velocity",))
    assert run(cfg, "seg-eval", "report") == [0, 0]
    out = tmp_path / "out" / "report"
    assert not (out / "degradation_macc.csv").exists()
    warnings = json.loads((out / "metadata.json").read_text())["warnings"]
    assert any("degradation table omitted" in w for w in warnings)


def test_report_without_results_fails(tmp_path):
    gt, pred = two_class_clouds()
    assert run(small_dataset(tmp_path, gt, pred), "report") == 1


def test_report_nominal_reference_for_non_replica(tmp_path):
    gt, pred = two_class_clouds()
    cfg = small_dataset(tmp_path, gt, pred, conditions=("nominal_lights", "velocity"))
    doc = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    doc["dataset_name"] = "tiny-hm3d"
    (tmp_path / "manifest.yaml").write_text(yaml.safe_dump(doc))
    assert run(cfg, "seg-eval", "report") == [0, 0]
    rows = (tmp_path / "out" / "report" / "degradation_macc.csv").read_text().splitlines()
    assert rows[0] == "Method,Nominal Lights,Velocity"
    assert rows[1] == "M,0.00,0.00"


# --- scenario-emit ---------------------------------------------------------

def test_scenario_emit_all(tmp_path, capsys):
    assert main(["scenario-emit", "--out", str(tmp_path)]) == 0
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == ["baseline.yaml", "camera_light.yaml", "dynamic_lights.yaml",
                     "nominal_lights.yaml", "velocity.yaml"]
    assert load_condition_config(tmp_path / "velocity.yaml").linear_velocity == 1.5


def test_scenario_emit_one(tmp_path):
    assert main(["scenario-emit", "--out", str(tmp_path), "--condition", "CameraLight"]) == 0
    assert [p.name for p in tmp_path.iterdir()] == ["camera_light.yaml"]


def test_scenario_emit_needs_destination():
    assert main(["scenario-emit"]) == 2


def test_demo_replay_store_present():
    files = list((DEMO / "replay").glob("*.json"))
    assert files
    doc = json.loads(files[0].read_text())
    assert set(doc) >= {"request", "response"}
