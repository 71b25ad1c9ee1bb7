"""Loading and validation of dataset manifests, point clouds and scene graphs."""

from .cloud import VOID, LabeledPointCloud, load_point_cloud, write_point_cloud
from .manifest import (DatasetManifest, SceneEntry, SequenceSpec, list_keyframes,
                       load_manifest, read_structured)
from .scene_graph import (SceneEdge, SceneGraph, SceneNode, load_scene_graph,
                          scene_graph_from_dict, write_scene_graph)
from .validate import Issue, validate_sequence

__all__ = [
    "VOID", "LabeledPointCloud", "load_point_cloud", "write_point_cloud",
    "DatasetManifest", "SceneEntry", "SequenceSpec", "list_keyframes", "load_manifest",
    "read_structured", "SceneEdge", "SceneGraph", "SceneNode", "load_scene_graph",
    "scene_graph_from_dict", "write_scene_graph", "Issue", "validate_sequence",
]
