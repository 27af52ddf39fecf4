"""Felzenszwalb-style over-segmentation on a normal-dissimilarity graph.

Edges come from the mesh when faces are present, otherwise from
symmetrized k-nearest-neighbour pairs.  Edge dissimilarity is
``1 - dot(n_i, n_j)`` clamped to [0, 2].  Segmentation sorts edges
ascending and merges components while the edge is no heavier than
``internal(C) + k_thresh / |C|`` on both sides; a second pass over the
sorted edges then absorbs any component smaller than ``seg_min_verts``
into its most-similar neighbour (the first — lightest — incident edge).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .model import SceneGeometry, Superpoint, ValidationError


@dataclass(frozen=True)
class PresegmentConfig:
    k_thresh: float = 0.01
    seg_min_verts: int = 20
    knn: int = 8

    def validate(self) -> "PresegmentConfig":
        if self.k_thresh <= 0:
            raise ValidationError(f"k_thresh must be > 0, got {self.k_thresh}")
        if self.seg_min_verts < 1:
            raise ValidationError(f"seg_min_verts must be >= 1, got {self.seg_min_verts}")
        if self.knn < 1:
            raise ValidationError(f"knn must be >= 1, got {self.knn}")
        return self


def mesh_edges(faces: np.ndarray) -> np.ndarray:
    """Unique undirected (i, j) edges, i < j, from triangle faces."""
    if faces.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]])
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def knn_edges(points: np.ndarray, knn: int) -> np.ndarray:
    """Symmetrized k-NN edges, i < j, no self-loops."""
    n = points.shape[0]
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    k_eff = min(knn, n - 1)
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k_eff + 1)
    src = np.repeat(np.arange(n, dtype=np.int64), k_eff)
    dst = idx[:, 1:].reshape(-1).astype(np.int64)
    keep = src != dst  # guard against duplicate coordinates
    pairs = np.sort(np.column_stack([src[keep], dst[keep]]), axis=1)
    return np.unique(pairs, axis=0)


def build_affinity_edges(
    scene: SceneGeometry, config: PresegmentConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (edges (m, 2) int64 with i < j, dissimilarity (m,) float64)."""
    config.validate()
    if scene.is_mesh:
        edges = mesh_edges(scene.faces)
    else:
        edges = knn_edges(scene.points, config.knn)
    if edges.shape[0] == 0:
        return edges, np.zeros(0, dtype=np.float64)
    dots = np.einsum("ij,ij->i", scene.normals[edges[:, 0]], scene.normals[edges[:, 1]])
    diss = np.clip(1.0 - dots, 0.0, 2.0)
    return edges, diss


class UnionFind:
    """Disjoint sets with path compression and union by rank."""

    def __init__(self, n: int) -> None:
        self.parent = np.arange(n, dtype=np.int64)
        self.rank = np.zeros(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x: int) -> int:
        root = x
        parent = self.parent
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return int(root)

    def union(self, a: int, b: int) -> int:
        """Unites the sets of a and b; returns the new root."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return ra


def felzenszwalb_segment(
    edges: np.ndarray,
    dissimilarity: np.ndarray,
    num_points: int,
    config: PresegmentConfig,
    points: np.ndarray | None = None,
) -> list[Superpoint]:
    """Segment the edge graph into superpoints covering all points.

    Deterministic: edges are processed in (d, i, j) order.
    """
    config.validate()
    if num_points < 1:
        raise ValidationError("num_points must be >= 1")

    order = np.lexsort((edges[:, 1], edges[:, 0], dissimilarity)) if edges.size else np.zeros(0, dtype=np.int64)
    uf = UnionFind(num_points)
    # internal(C) tracked via threshold[root] = internal(C) + k/|C|
    threshold = np.full(num_points, config.k_thresh, dtype=np.float64)

    for e in order:
        i, j = int(edges[e, 0]), int(edges[e, 1])
        d = float(dissimilarity[e])
        ri, rj = uf.find(i), uf.find(j)
        if ri == rj:
            continue
        if d <= threshold[ri] and d <= threshold[rj]:
            root = uf.union(ri, rj)
            threshold[root] = d + config.k_thresh / uf.size[root]

    if config.seg_min_verts > 1:
        for e in order:
            i, j = int(edges[e, 0]), int(edges[e, 1])
            ri, rj = uf.find(i), uf.find(j)
            if ri != rj and (uf.size[ri] < config.seg_min_verts or uf.size[rj] < config.seg_min_verts):
                uf.union(ri, rj)

    roots = np.fromiter((uf.find(i) for i in range(num_points)), dtype=np.int64, count=num_points)
    superpoints: list[Superpoint] = []
    # sp_ids ordered by each component's smallest point index
    order_first = np.argsort(roots, kind="stable")
    sorted_roots = roots[order_first]
    boundaries = np.nonzero(np.diff(sorted_roots))[0] + 1
    groups = np.split(order_first, boundaries)
    groups.sort(key=lambda g: int(g.min()))
    for sp_id, members in enumerate(groups):
        superpoints.append(Superpoint.from_indices(sp_id, members, points))
    return superpoints


def presegment(scene: SceneGeometry, config: PresegmentConfig) -> list[Superpoint]:
    """End-to-end over-segmentation of a validated scene."""
    edges, diss = build_affinity_edges(scene, config)
    return felzenszwalb_segment(edges, diss, scene.num_points, config, scene.points)
