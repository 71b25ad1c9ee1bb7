from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import PlyFormatError
from . import ply

VOID = -1


@dataclass(frozen=True, eq=False)
class LabeledPointCloud:
    """Points (N x 3, meters) with per-point class ids; -1 marks void."""

    points: np.ndarray
    class_ids: np.ndarray
    instance_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be N x 3, got shape {pts.shape}")
        cls = np.asarray(self.class_ids)
        if cls.shape != (len(pts),):
            raise ValueError("class_ids length differs from point count")
        if self.instance_ids is not None and np.shape(self.instance_ids) != (len(pts),):
            raise ValueError("instance_ids length differs from point count")
        for arr in (pts, cls, self.instance_ids):
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "class_ids", cls)

    def __len__(self):
        return len(self.points)

    @property
    def is_finite(self) -> bool:
        return bool(np.isfinite(self.points).all())


def load_point_cloud(path, label_field: str = "class_id", num_classes: Optional[int] = None,
                     instance_field: str = "instance_id") -> LabeledPointCloud:
    """Load a labeled PLY point cloud.

    Label values outside ``[0, num_classes)`` (or negative ones when
    ``num_classes`` is None) become -1.
    """
    _, vertices = ply.read_vertices(path)
    names = vertices.dtype.names
    for required in ("x", "y", "z", label_field):
        if required not in names:
            raise PlyFormatError(f"{path}: vertex element has no '{required}' property")
    if vertices.dtype[label_field].kind not in "iu":
        raise PlyFormatError(f"{path}: label property '{label_field}' is not an integer type")
    coord_dtype = np.result_type(vertices.dtype["x"], vertices.dtype["y"], vertices.dtype["z"])
    points = np.stack([vertices["x"], vertices["y"], vertices["z"]], axis=1).astype(coord_dtype)
    labels = vertices[label_field].astype(np.int64)
    bad = labels < 0
    if num_classes is not None:
        bad |= labels >= num_classes
    labels[bad] = VOID
    instances = None
    if instance_field in names:
        instances = vertices[instance_field].astype(np.int64)
    return LabeledPointCloud(points, labels, instances)


def write_point_cloud(path, cloud: LabeledPointCloud, label_field: str = "class_id",
                      binary: bool = True) -> None:
    pts = cloud.points
    if pts.dtype not in (np.float32, np.float64):
        pts = pts.astype(np.float64)
    columns = {"x": pts[:, 0], "y": pts[:, 1], "z": pts[:, 2],
               label_field: cloud.class_ids.astype(np.int32)}
    if cloud.instance_ids is not None:
        columns["instance_id"] = np.asarray(cloud.instance_ids).astype(np.int32)
    ply.write_ply(path, columns, binary=binary)
