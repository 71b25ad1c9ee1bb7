from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..errors import ParseError, SchemaError


@dataclass(frozen=True)
class SceneNode:
    node_id: str
    label: str
    caption: Optional[str] = None
    attributes: dict = field(default_factory=dict)
    centroid: Optional[tuple] = None


@dataclass(frozen=True)
class SceneEdge:
    source: str
    target: str
    relation: str


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple = ()
    edges: tuple = ()

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        seen = set()
        for node_id in ids:
            if node_id in seen:
                raise SchemaError(f"duplicate node id '{node_id}'", field="nodes")
            seen.add(node_id)
        for i, e in enumerate(self.edges):
            for end in (e.source, e.target):
                if end not in seen:
                    raise SchemaError(f"edge {i} references unknown node '{end}'",
                                      field=f"edges[{i}]")

    def node(self, node_id):
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            d = {"node_id": n.node_id, "label": n.label}
            if n.caption is not None:
                d["caption"] = n.caption
            d["attributes"] = dict(n.attributes)
            if n.centroid is not None:
                d["centroid"] = list(n.centroid)
            nodes.append(d)
        edges = [{"source": e.source, "target": e.target, "relation": e.relation}
                 for e in self.edges]
        return {"nodes": nodes, "edges": edges}

    def to_prompt_text(self) -> str:
        """Plain-text rendering embedded in answering prompts."""
        lines = [f"Objects ({len(self.nodes)}):"]
        for n in self.nodes:
            line = f"- [{n.node_id}] {n.label}"
            if n.caption:
                line += f" ({n.caption})"
            if n.attributes:
                attrs = ", ".join(f"{k}: {v}" for k, v in sorted(n.attributes.items()))
                line += f" {{{attrs}}}"
            if n.centroid is not None:
                line += " @ (" + ", ".join(f"{c:.2f}" for c in n.centroid) + ")"
            lines.append(line)
        lines.append(f"Relations ({len(self.edges)}):")
        for e in self.edges:
            src, dst = self.node(e.source), self.node(e.target)
            lines.append(f"- {src.label} [{src.node_id}] --{e.relation}--> "
                         f"{dst.label} [{dst.node_id}]")
        return "\n".join(lines)


def scene_graph_from_dict(doc, path=None) -> SceneGraph:
    if not isinstance(doc, dict):
        raise SchemaError("scene graph document must be an object", path=path)
    for key in ("nodes", "edges"):
        if key not in doc:
            raise SchemaError(f"missing required field '{key}'", path=path, field=key)
        if not isinstance(doc[key], list):
            raise SchemaError(f"'{key}' must be an array", path=path, field=key)
    nodes = []
    for i, raw in enumerate(doc["nodes"]):
        where = f"nodes[{i}]"
        if not isinstance(raw, dict):
            raise SchemaError("node must be an object", path=path, field=where)
        for key in ("node_id", "label"):
            if key not in raw:
                raise SchemaError(f"missing '{key}'", path=path, field=where)
        attrs = raw.get("attributes") or {}
        if not isinstance(attrs, dict):
            raise SchemaError("attributes must be an object", path=path, field=where)
        centroid = raw.get("centroid")
        if centroid is not None:
            if not isinstance(centroid, list) or len(centroid) != 3:
                raise SchemaError("centroid must have 3 numbers", path=path, field=where)
            centroid = tuple(float(c) for c in centroid)
        nodes.append(SceneNode(str(raw["node_id"]), str(raw["label"]), raw.get("caption"),
                               {str(k): v for k, v in attrs.items()}, centroid))
    edges = []
    for i, raw in enumerate(doc["edges"]):
        if not isinstance(raw, dict) or not {"source", "target", "relation"} <= raw.keys():
            raise SchemaError("edge needs source, target and relation", path=path,
                              field=f"edges[{i}]")
        edges.append(SceneEdge(str(raw["source"]), str(raw["target"]), str(raw["relation"])))
    try:
        return SceneGraph(tuple(nodes), tuple(edges))
    except SchemaError as exc:
        raise SchemaError(str(exc), path=path) from None


def load_scene_graph(path) -> SceneGraph:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None
    return scene_graph_from_dict(doc, path=path)


def write_scene_graph(path, graph: SceneGraph) -> None:
    Path(path).write_text(json.dumps(graph.to_dict(), indent=2) + "\n", encoding="utf-8")
