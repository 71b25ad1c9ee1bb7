"""Regenerate the demo dataset and its replay store under tests/data/demo.

    python3 tests/make_demo.py            # data files + replay store

The replay store is recorded by running the qa stages with the rule-based
FakeLLMTransport in record mode, so later runs (tests, README walkthrough)
replay it without any endpoint.
"""

import json
import shutil
import struct
import sys
import tempfile
import zlib
from pathlib import Path

import numpy as np
import yaml

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

from fake_llm import FakeLLMTransport  # noqa: E402
from semmap_bench.cli import main  # noqa: E402
from semmap_bench.ingest.cloud import LabeledPointCloud, write_point_cloud  # noqa: E402

DEMO = HERE / "data" / "demo"
N_FRAMES = 6

WORLD = {
    "apt_0": [
        {"name": "sofa", "attributes": {"color": "blue", "material": "fabric", "size": "large"},
         "frames": [0, 1], "relations": [["next to", "table"]]},
        {"name": "table", "attributes": {"color": "brown", "material": "wood", "size": "medium"},
         "frames": [1, 2], "relations": [["supports", "lamp"]]},
        {"name": "lamp", "attributes": {"color": "white", "size": "small"},
         "frames": [2, 3], "relations": [["on", "table"]]},
        {"name": "chair", "attributes": {"color": "black", "count": "2", "size": "medium"},
         "frames": [3, 4], "relations": [["next to", "table"]]},
        {"name": "rug", "attributes": {"color": "red"}, "frames": [0, 5],
         "variants": {"5": {"color": "beige"}}},
        {"name": "shelf", "attributes": {"color": "white", "size": "large"},
         "frames": [4, 5], "relations": [["supports", "plant"]]},
        {"name": "plant", "attributes": {"color": "green", "size": "small"},
         "frames": [5], "relations": [["on", "shelf"]]},
        {"name": "tv", "attributes": {"color": "black", "size": "medium"},
         "frames": [0], "relations": [["above", "cabinet"]]},
        {"name": "cabinet", "attributes": {"color": "brown", "material": "wood"},
         "frames": [0, 5]},
    ],
    "apt_1": [
        {"name": "bed", "attributes": {"color": "white", "size": "large"}, "frames": [0, 1],
         "relations": [["supports", "pillow"]]},
        {"name": "pillow", "attributes": {"color": "yellow", "count": "2", "size": "small"},
         "frames": [0, 1], "relations": [["on", "bed"]]},
        {"name": "desk", "attributes": {"color": "brown", "material": "wood", "size": "medium"},
         "frames": [2, 3], "relations": [["supports", "monitor"]]},
        {"name": "chair", "attributes": {"color": "gray", "size": "medium"}, "frames": [2],
         "relations": [["next to", "desk"]]},
        {"name": "monitor", "attributes": {"color": "black", "size": "small"},
         "frames": [3], "relations": [["on", "desk"]]},
        {"name": "window", "attributes": {"shape": "rectangular"}, "frames": [4, 5]},
        {"name": "door", "attributes": {"color": "white", "material": "wood"}, "frames": [5]},
        {"name": "wardrobe", "attributes": {"color": "brown", "size": "large"},
         "frames": [4, 5]},
    ],
}
CONDITIONS = {
    "apt_0": ["baseline", "camera_light", "dynamic_lights", "nominal_lights", "velocity"],
    "apt_1": ["baseline", "nominal_lights", "velocity"],
}
# label-flip probability per method, scaled per condition
METHOD_NOISE = {"MapperA": 0.08, "MapperB": 0.2}
CONDITION_SCALE = {"baseline": 1.0, "camera_light": 0.9, "dynamic_lights": 1.5,
                   "nominal_lights": 1.25, "velocity": 1.8}
# objects a method's scene graph misses under a condition
GRAPH_DROPS = {("MapperA", "velocity"): 2, ("MapperB", "dynamic_lights"): 3,
               ("MapperB", "velocity"): 3, ("MapperB", "nominal_lights"): 1}


def class_names():
    names = []
    for objs in WORLD.values():
        for o in objs:
            if o["name"] not in names:
                names.append(o["name"])
    return names


def png_bytes(width, height, rgb):
    raw = b"".join(b"\x00" + bytes(rgb) * width for _ in range(height))

    def chunk(tag, data):
        return (struct.pack(">I", len(data)) + tag + data
                + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF))

    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", struct.pack(">IIBBBBB", width, height, 8, 2,
                                                             0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))


def gt_cloud(scene_id, names, rng):
    points, labels = [], []
    for i, obj in enumerate(WORLD[scene_id]):
        centre = np.array([i % 3, i // 3, 0.0]) * 1.5
        n = 30 * int(obj["attributes"].get("count", 1))
        points.append(centre + rng.uniform(-0.4, 0.4, size=(n, 3)))
        labels.append(np.full(n, names.index(obj["name"])))
    return LabeledPointCloud(np.vstack(points).astype(np.float32),
                             np.concatenate(labels).astype(np.int64))


def pred_cloud(gt, scene_ids, p, rng, perm):
    keep = rng.random(len(gt)) > p / 3  # some GT points get no prediction nearby
    pts = gt.points[keep] + rng.normal(0, 0.005, size=(keep.sum(), 3)).astype(np.float32)
    labels = gt.class_ids[keep].copy()
    flip = rng.random(len(labels)) < p
    labels[flip] = rng.choice(scene_ids, size=flip.sum())
    return LabeledPointCloud(pts.astype(np.float32), perm[labels])


def scene_graph(scene_id, drop):
    objs = WORLD[scene_id][:len(WORLD[scene_id]) - drop] if drop else WORLD[scene_id]
    nodes, edges, ids = [], [], {}
    for o in objs:
        attrs = {k: v for k, v in o["attributes"].items() if k != "count"}
        for k in range(int(o["attributes"].get("count", 1))):
            node_id = f"{o['name']}_{k}"
            ids.setdefault(o["name"], node_id)
            nodes.append({"node_id": node_id, "label": o["name"],
                          "caption": f"a {attrs.get('color', '')} {o['name']}".replace("  ", " "),
                          "attributes": attrs})
    for o in objs:
        for rel, other in o.get("relations", []):
            if other in ids:
                edges.append({"source": ids[o["name"]], "target": ids[other],
                              "relation": rel})
    return {"nodes": nodes, "edges": edges}


def write_data():
    if DEMO.exists():
        shutil.rmtree(DEMO)
    DEMO.mkdir(parents=True)
    names = class_names()
    (DEMO / "classes.txt").write_text("\n".join(names) + "\n", encoding="utf-8")
    (DEMO / "world.json").write_text(json.dumps(WORLD, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    # MapperB reports its own label names in reverse order and spelling
    b_names = [n.upper().replace(" ", "_") for n in reversed(names)]
    (DEMO / "mapper_b_labels.txt").write_text("\n".join(b_names) + "\n", encoding="utf-8")
    perms = {"MapperA": np.arange(len(names)),
             "MapperB": np.array([len(names) - 1 - i for i in range(len(names))])}

    rng = np.random.default_rng(7)
    scenes = []
    for scene_no, (scene_id, conds) in enumerate(CONDITIONS.items()):
        gt = gt_cloud(scene_id, names, rng)
        scene_ids = np.unique(gt.class_ids)
        seqs = []
        for cond in conds:
            base = DEMO / "scenes" / scene_id / cond
            write_point_cloud(base / "gt.ply", gt)
            seq = {"condition": cond, "gt_cloud": f"scenes/{scene_id}/{cond}/gt.ply"}
            if cond == "baseline":
                kdir = base / "keyframes"
                kdir.mkdir(parents=True)
                for f in range(N_FRAMES):
                    shade = (40 * f + 20, 90 + 60 * scene_no, 200 - 30 * f)  # distinct bytes per frame
                    (kdir / f"frame_{f:03d}.png").write_bytes(png_bytes(4, 4, shade))
                seq["keyframes_dir"] = f"scenes/{scene_id}/{cond}/keyframes"
            seqs.append(seq)
            for method, noise in METHOD_NOISE.items():
                if method == "MapperB" and scene_id == "apt_0" and cond == "velocity":
                    continue  # exercises the missing-prediction path
                mdir = DEMO / "methods" / method / scene_id
                p = min(0.9, noise * CONDITION_SCALE[cond])
                write_point_cloud(mdir / f"{cond}.ply",
                                  pred_cloud(gt, scene_ids, p, rng, perms[method]))
                graph = scene_graph(scene_id, GRAPH_DROPS.get((method, cond), 0))
                (mdir / f"{cond}.json").write_text(json.dumps(graph, indent=2) + "\n",
                                                    encoding="utf-8")
        scenes.append({"scene_id": scene_id, "sequences": seqs})

    manifest = {"dataset_name": "demo-replicacad", "dataset_kind": "replicacad",
                "class_vocabulary_path": "classes.txt", "scenes": scenes}
    (DEMO / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False),
                                        encoding="utf-8")
    (DEMO / "run.yaml").write_text(yaml.safe_dump(run_config(), sort_keys=False),
                                   encoding="utf-8")


def run_config(output_dir="out", replay_dir="replay"):
    return {
        "manifest": "manifest.yaml",
        "output_dir": output_dir,
        "workers": 4,
        "methods": [
            {"name": "MapperA", "pred_cloud": "methods/MapperA/{scene}/{condition}.ply",
             "scene_graph": "methods/MapperA/{scene}/{condition}.json", "fps": 2.5},
            {"name": "MapperB", "pred_cloud": "methods/MapperB/{scene}/{condition}.ply",
             "scene_graph": "methods/MapperB/{scene}/{condition}.json",
             "label_names": "mapper_b_labels.txt", "fps": 0.4},
        ],
        "gateway": {"mode": "replay", "replay_dir": replay_dir},
        "seg": {"radius": 0.05, "matcher": "exact"},
        "vqa": {"n_total": 24, "seed": 0, "max_object_share": 0.3,
                "sampling": {"stride": 2}},
    }


def record():
    world = json.loads((DEMO / "world.json").read_text(encoding="utf-8"))
    transport = FakeLLMTransport(world)
    replay = DEMO / "replay"
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "run.yaml"
        doc = run_config(str(Path(tmp) / "out"), str(replay))
        doc["manifest"] = str(DEMO / "manifest.yaml")
        for m in doc["methods"]:
            for key in ("pred_cloud", "scene_graph", "label_names"):
                if key in m:
                    m[key] = str(DEMO / m[key])
        cfg.write_text(yaml.safe_dump(doc), encoding="utf-8")
        for stage in ("qa-gen", "qa-validate", "qa-answer", "qa-eval"):
            code = main([stage, "--config", str(cfg), "--record", "--replay-dir", str(replay)],
                        transport=transport)
            if code:
                raise SystemExit(f"{stage} failed with exit code {code}")
    print(f"recorded {transport.calls} responses into {replay}")


if __name__ == "__main__":
    write_data()
    record()
