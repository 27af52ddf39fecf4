"""Sparse edge labels from per-view whole-image instance maps.

For every co-visible view of an edge, each superpoint takes the majority
instance label over its visible pixels (background excluded; ties or
all-background majorities abstain).  Equal majorities vote "same",
unequal ones vote "different".  An edge becomes POSITIVE only when it
collected at least ``n_min`` same-votes and zero different-votes, and
NEGATIVE only in the symmetric case — any disagreement leaves the edge
unlabeled, which is what keeps the labels high-precision.

Instance maps are uint16 label images (0 = background, ids view-local)
stored as ``instances_<view_id>.imap``: magic ``IMP1``, u32 H, u32 W,
u16 labels row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import CameraView, EdgeLabel, SuperpointGraph, ValidationError
from .oracle import OracleFormatError
from .projection import VisibilityIndex

IMAP_MAGIC = b"IMP1"


def imap_path(directory: str | Path, view_id: int) -> Path:
    return Path(directory) / f"instances_{view_id}.imap"


def save_imap(labels: np.ndarray, path: str | Path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValidationError(f"instance map must be 2D, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > np.iinfo(np.uint16).max:
        raise ValidationError("instance map labels must fit in uint16")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(IMAP_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(labels.astype("<u2").tobytes())


def load_imap(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != IMAP_MAGIC:
        raise OracleFormatError(f"{path}: bad instance map magic {buf[:4]!r}")
    if len(buf) < 12:
        raise OracleFormatError(f"{path}: truncated instance map header")
    h, w = struct.unpack_from("<II", buf, 4)
    need = 12 + 2 * h * w
    if len(buf) != need:
        raise OracleFormatError(f"{path}: expected {need} bytes, found {len(buf)}")
    return (
        np.frombuffer(buf, dtype="<u2", count=h * w, offset=12)
        .reshape(h, w)
        .astype(np.int64)
    )


class InstanceMapStore:
    """Per-view instance label images."""

    def __init__(self, maps: dict[int, np.ndarray]) -> None:
        self.maps = {int(k): np.asarray(v, dtype=np.int64) for k, v in maps.items()}

    @classmethod
    def from_dir(cls, directory: str | Path, views: list[CameraView]) -> "InstanceMapStore":
        maps = {}
        for view in views:
            path = imap_path(directory, view.view_id)
            if path.is_file():
                maps[view.view_id] = load_imap(path)
        return cls(maps).validate(views)

    def validate(self, views: list[CameraView]) -> "InstanceMapStore":
        dims = {v.view_id: (v.height, v.width) for v in views}
        for view_id, labels in self.maps.items():
            if view_id in dims and labels.shape != dims[view_id]:
                raise ValidationError(
                    f"instance map for view {view_id} has shape {labels.shape}, "
                    f"camera says {dims[view_id]}"
                )
        return self

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for view_id, labels in sorted(self.maps.items()):
            save_imap(labels, imap_path(directory, view_id))


@dataclass
class CoVisibilityRecord:
    edge: tuple[int, int]
    votes_same: int = 0
    votes_diff: int = 0


def majority_label(labels: np.ndarray, pixels: np.ndarray) -> int:
    """Majority non-background label at ``pixels``; 0 on tie or all-background."""
    vals = labels[pixels[:, 0], pixels[:, 1]]
    vals = vals[vals > 0]
    if vals.size == 0:
        return 0
    counts = np.bincount(vals)
    top = counts.max()
    winners = np.nonzero(counts == top)[0]
    if winners.size > 1:
        return 0
    return int(winners[0])


def record_edge_votes(
    edge: tuple[int, int],
    visibility: VisibilityIndex,
    store: InstanceMapStore,
) -> CoVisibilityRecord:
    u, v = edge
    record = CoVisibilityRecord(edge=edge)
    for view_id in visibility.covisible_views(u, v):
        labels = store.maps.get(view_id)
        if labels is None:
            continue
        maj_u = majority_label(labels, visibility.mask(u, view_id).pixel_array())
        maj_v = majority_label(labels, visibility.mask(v, view_id).pixel_array())
        if maj_u == 0 or maj_v == 0:
            continue
        if maj_u == maj_v:
            record.votes_same += 1
        else:
            record.votes_diff += 1
    return record


def make_pseudo_labels(
    records: list[CoVisibilityRecord], n_min: int = 10
) -> dict[tuple[int, int], EdgeLabel]:
    """POSITIVE/NEGATIVE only for edges consistent across >= n_min views."""
    if n_min < 1:
        raise ValidationError(f"n_min must be >= 1, got {n_min}")
    labels: dict[tuple[int, int], EdgeLabel] = {}
    for rec in records:
        if rec.votes_same >= n_min and rec.votes_diff == 0:
            labels[rec.edge] = EdgeLabel.POSITIVE
        elif rec.votes_diff >= n_min and rec.votes_same == 0:
            labels[rec.edge] = EdgeLabel.NEGATIVE
    return labels


def annotate_pseudo_labels(
    graph: SuperpointGraph,
    visibility: VisibilityIndex,
    store: InstanceMapStore,
    n_min: int = 10,
) -> SuperpointGraph:
    """Fills edge.pseudo_label in place; unlabeled edges stay absent."""
    records = [record_edge_votes((e.u, e.v), visibility, store) for e in graph.edges]
    labels = make_pseudo_labels(records, n_min)
    for e in graph.edges:
        e.pseudo_label = labels.get((e.u, e.v))
    return graph
