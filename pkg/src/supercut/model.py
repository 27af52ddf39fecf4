"""Core domain types shared across the pipeline.

Everything here is a plain immutable-after-construction container with an
explicit ``validate()`` that rejects malformed data instead of repairing it.
The reserved ground-truth instance ids are:

    NONE_ID  = -1   unannotated points
    FLOOR_ID = -2   floor region (excluded from evaluation)
    WALL_ID  = -3   wall regions (excluded from evaluation)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np

NONE_ID = -1
FLOOR_ID = -2
WALL_ID = -3

RESERVED_IDS = {NONE_ID, FLOOR_ID, WALL_ID}

FEATURE_DIM = 256

NORMAL_TOL = 1e-4
CENTROID_TOL = 1e-6
ROTATION_TOL = 1e-6


class ValidationError(ValueError):
    """A domain type failed one of its declared invariants."""


class EdgeLabel(IntEnum):
    NEGATIVE = 0
    POSITIVE = 1


@dataclass
class SceneGeometry:
    """Point cloud or triangle mesh with per-point attributes.

    ``faces`` present means mesh mode.  ``gt_instance`` uses the reserved
    ids above for unannotated / floor / wall points.
    """

    points: np.ndarray
    normals: np.ndarray
    colors: np.ndarray | None = None
    faces: np.ndarray | None = None
    gt_instance: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        if self.colors is not None:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
        if self.faces is not None:
            self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.gt_instance is not None:
            self.gt_instance = np.ascontiguousarray(self.gt_instance, dtype=np.int64)

    @property
    def num_points(self) -> int:
        return int(self.points.shape[0])

    @property
    def is_mesh(self) -> bool:
        return self.faces is not None

    def validate(self) -> "SceneGeometry":
        n = self.num_points
        if n == 0:
            raise ValidationError("scene has zero points")
        if self.points.shape != (n, 3):
            raise ValidationError(f"points must be (n, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("points contain non-finite values")
        if self.normals.shape != (n, 3):
            raise ValidationError(f"normals must be ({n}, 3), got {self.normals.shape}")
        norms = np.linalg.norm(self.normals, axis=1)
        bad = np.abs(norms - 1.0) > NORMAL_TOL
        if np.any(bad):
            raise ValidationError(
                f"{int(bad.sum())} normals are not unit length (first at index "
                f"{int(np.argmax(bad))})"
            )
        if self.colors is not None:
            if self.colors.shape != (n, 3):
                raise ValidationError(f"colors must be ({n}, 3), got {self.colors.shape}")
            if self.colors.min() < 0.0 or self.colors.max() > 1.0:
                raise ValidationError("colors must lie in [0, 1]")
        if self.faces is not None:
            if self.faces.ndim != 2 or self.faces.shape[1] != 3:
                raise ValidationError(f"faces must be (m, 3), got {self.faces.shape}")
            if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
                raise ValidationError("face indices out of range")
        if self.gt_instance is not None and self.gt_instance.shape != (n,):
            raise ValidationError(
                f"gt_instance must have length {n}, got {self.gt_instance.shape}"
            )
        return self


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera with a world-to-camera rigid transform (+z forward)."""

    view_id: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    width: int
    height: int

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "rotation", np.ascontiguousarray(self.rotation, dtype=np.float64)
        )
        object.__setattr__(
            self, "translation", np.ascontiguousarray(self.translation, dtype=np.float64)
        )

    def validate(self) -> "CameraView":
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"view {self.view_id}: focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValidationError(f"view {self.view_id}: principal point outside image")
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValidationError(f"view {self.view_id}: bad extrinsics shape")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise ValidationError(
                f"view {self.view_id}: rotation not orthonormal (err {err:.2e})"
            )
        return self

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (n, 3) -> camera frame."""
        return points @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Project world points; returns float (rows, cols, depths).

        Points at or behind the camera plane get depth <= 0; callers must
        filter on depth and image bounds.
        """
        cam = self.to_camera(points)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            cols = self.fx * cam[:, 0] / z + self.cx
            rows = self.fy * cam[:, 1] / z + self.cy
        return rows, cols, z


def load_cameras(path: str | Path) -> list[CameraView]:
    """Read the cameras JSON file (R row-major 9, t length 3)."""
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    views = []
    for rec in raw:
        views.append(
            CameraView(
                view_id=int(rec["view_id"]),
                fx=float(rec["fx"]),
                fy=float(rec["fy"]),
                cx=float(rec["cx"]),
                cy=float(rec["cy"]),
                rotation=np.asarray(rec["R"], dtype=np.float64).reshape(3, 3),
                translation=np.asarray(rec["t"], dtype=np.float64),
                width=int(rec["width"]),
                height=int(rec["height"]),
            ).validate()
        )
    return views


def save_cameras(views: Sequence[CameraView], path: str | Path) -> None:
    recs = []
    for v in views:
        recs.append(
            {
                "view_id": v.view_id,
                "fx": v.fx,
                "fy": v.fy,
                "cx": v.cx,
                "cy": v.cy,
                "width": v.width,
                "height": v.height,
                "R": [float(x) for x in v.rotation.reshape(-1)],
                "t": [float(x) for x in v.translation],
            }
        )
    with open(path, "w", encoding="utf-8") as f:
        json.dump(recs, f, indent=1, sort_keys=True)


@dataclass
class Superpoint:
    """A geometrically homogeneous cluster of points; the atomic merge unit."""

    sp_id: int
    point_indices: np.ndarray
    centroid: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.point_indices = np.ascontiguousarray(self.point_indices, dtype=np.int64)
        if self.centroid is not None:
            self.centroid = np.ascontiguousarray(self.centroid, dtype=np.float64)

    @classmethod
    def from_indices(
        cls, sp_id: int, indices: np.ndarray, points: np.ndarray | None = None
    ) -> "Superpoint":
        idx = np.sort(np.asarray(indices, dtype=np.int64))
        if idx.size == 0:
            raise ValidationError(f"superpoint {sp_id} is empty")
        centroid = points[idx].mean(axis=0) if points is not None else None
        return cls(sp_id=sp_id, point_indices=idx, centroid=centroid)

    @property
    def size(self) -> int:
        return int(self.point_indices.size)


def validate_partition(superpoints: Sequence[Superpoint], num_points: int) -> None:
    """Check superpoints are nonempty, disjoint, and cover all points."""
    seen = np.zeros(num_points, dtype=bool)
    for sp in superpoints:
        if sp.size == 0:
            raise ValidationError(f"superpoint {sp.sp_id} is empty")
        if np.any(seen[sp.point_indices]):
            raise ValidationError(f"superpoint {sp.sp_id} overlaps another superpoint")
        seen[sp.point_indices] = True
    if not np.all(seen):
        raise ValidationError(f"{int((~seen).sum())} points belong to no superpoint")


def save_superpoints(superpoints: Sequence[Superpoint], path: str | Path) -> None:
    recs = [
        {"sp_id": sp.sp_id, "point_indices": sp.point_indices.tolist()}
        for sp in superpoints
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(recs, f)


def load_superpoints(path: str | Path, points: np.ndarray | None = None) -> list[Superpoint]:
    with open(path, "r", encoding="utf-8") as f:
        recs = json.load(f)
    return [Superpoint.from_indices(r["sp_id"], np.asarray(r["point_indices"]), points) for r in recs]


@dataclass
class GraphNode:
    sp_id: int
    feature: np.ndarray | None = None


@dataclass
class GraphEdge:
    u: int
    v: int
    w_sam: float | None = None
    affinity: float | None = None
    pseudo_label: EdgeLabel | None = None

    def key(self) -> tuple[int, int]:
        return (self.u, self.v)


@dataclass
class SuperpointGraph:
    """Annotated superpoint graph; edges are canonical (u < v), no duplicates."""

    nodes: list[GraphNode] = field(default_factory=list)
    edges: list[GraphEdge] = field(default_factory=list)

    def validate(self) -> "SuperpointGraph":
        ids = [n.sp_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate node sp_ids")
        idset = set(ids)
        seen = set()
        for e in self.edges:
            if e.u >= e.v:
                raise ValidationError(f"edge ({e.u}, {e.v}) not canonical (u < v)")
            if (e.u, e.v) in seen:
                raise ValidationError(f"duplicate edge ({e.u}, {e.v})")
            seen.add((e.u, e.v))
            if e.u not in idset or e.v not in idset:
                raise ValidationError(f"edge ({e.u}, {e.v}) references unknown node")
            for name, val in (("w_sam", e.w_sam), ("affinity", e.affinity)):
                if val is not None and not (0.0 <= val <= 1.0):
                    raise ValidationError(f"edge ({e.u}, {e.v}) {name}={val} outside [0, 1]")
        for n in self.nodes:
            if n.feature is not None and n.feature.shape != (FEATURE_DIM,):
                raise ValidationError(f"node {n.sp_id} feature has shape {n.feature.shape}")
        return self

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def node_index(self) -> dict[int, int]:
        return {n.sp_id: i for i, n in enumerate(self.nodes)}

    def neighbors(self) -> dict[int, set[int]]:
        nbrs: dict[int, set[int]] = {n.sp_id: set() for n in self.nodes}
        for e in self.edges:
            nbrs[e.u].add(e.v)
            nbrs[e.v].add(e.u)
        return nbrs

    def edge_lookup(self) -> dict[tuple[int, int], GraphEdge]:
        return {e.key(): e for e in self.edges}


def merge_graphs(graphs: Sequence[SuperpointGraph]) -> SuperpointGraph:
    """Disjoint union of graphs with sp_ids offset to stay unique."""
    nodes: list[GraphNode] = []
    edges: list[GraphEdge] = []
    offset = 0
    for g in graphs:
        for n in g.nodes:
            nodes.append(GraphNode(sp_id=n.sp_id + offset, feature=n.feature))
        for e in g.edges:
            edges.append(
                GraphEdge(
                    u=e.u + offset,
                    v=e.v + offset,
                    w_sam=e.w_sam,
                    affinity=e.affinity,
                    pseudo_label=e.pseudo_label,
                )
            )
        if g.nodes:
            offset += max(n.sp_id for n in g.nodes) + 1
    return SuperpointGraph(nodes=nodes, edges=edges)


@dataclass(frozen=True)
class Instance:
    instance_id: int
    confidence: float


@dataclass
class InstanceSegmentation:
    """Per-point instance assignment plus per-instance confidences."""

    assignment: np.ndarray  # (n,) int64, NONE_ID where unassigned
    instances: list[Instance]

    def __post_init__(self) -> None:
        self.assignment = np.ascontiguousarray(self.assignment, dtype=np.int64)

    def validate(self) -> "InstanceSegmentation":
        ids = {inst.instance_id for inst in self.instances}
        if len(ids) != len(self.instances):
            raise ValidationError("duplicate instance ids")
        assigned = set(np.unique(self.assignment).tolist()) - {NONE_ID}
        missing = assigned - ids
        if missing:
            raise ValidationError(f"assigned ids missing from instance list: {sorted(missing)}")
        for inst in self.instances:
            if not (0.0 <= inst.confidence <= 1.0):
                raise ValidationError(f"instance {inst.instance_id} confidence outside [0, 1]")
        return self

    def points_of(self, instance_id: int) -> np.ndarray:
        return np.nonzero(self.assignment == instance_id)[0]


def save_segmentation(seg: InstanceSegmentation, path: str | Path) -> None:
    payload = {
        "assignment": seg.assignment.tolist(),
        "instances": [
            {"id": inst.instance_id, "confidence": inst.confidence} for inst in seg.instances
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_segmentation(path: str | Path) -> InstanceSegmentation:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    return InstanceSegmentation(
        assignment=np.asarray(payload["assignment"], dtype=np.int64),
        instances=[Instance(int(r["id"]), float(r["confidence"])) for r in payload["instances"]],
    ).validate()
