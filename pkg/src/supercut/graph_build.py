"""Superpoint-graph assembly: adjacency, oracle-derived edge weights with
multi-view aggregation, and node features.

Per co-visible view, an edge (u, v) yields one observation: the
intersection ratio of the selected oracle masks, the two mask
confidences, and the 2D distance between the superpoints' projection
centroids.  Observation i gets score ``dist_2d * conf_a * conf_b``;
scores are L1-normalized into coefficients and the final edge weight is
the coefficient-weighted mean of the per-view ratios (zero when no
co-visible view exists, uniform coefficients when all scores vanish).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .model import (
    CameraView,
    GraphEdge,
    GraphNode,
    SceneGeometry,
    Superpoint,
    SuperpointGraph,
    ValidationError,
)
from .oracle import (
    FeatureStore,
    MaskCandidate,
    MissingOracleDataError,
    OracleFormatError,
    PromptSet,
    interpolate_features,
    sample_prompts,
    select_mask,
)
from .projection import (
    ProjectionConfig,
    RenderResult,
    VisibilityIndex,
    build_visibility,
    render_all_views,
    superpoint_distance_2d,
)
from .rng import TAG_FEATURE_SAMPLES, derive_rng


class AdjacencyMode(Enum):
    MESH_SHARED_EDGE = "mesh_shared_edge"
    DISTANCE = "distance"


@dataclass(frozen=True)
class AdjacencyConfig:
    mode: AdjacencyMode = AdjacencyMode.DISTANCE
    distance_threshold: float = 0.10  # meters

    def validate(self) -> "AdjacencyConfig":
        if self.mode is AdjacencyMode.DISTANCE and self.distance_threshold <= 0:
            raise ValidationError("distance_threshold must be > 0 in DISTANCE mode")
        return self


@dataclass(frozen=True)
class EdgeObservation:
    view_id: int
    w_i: float
    conf_a: float
    conf_b: float
    dist_2d: float

    def validate(self) -> "EdgeObservation":
        vals = (self.w_i, self.conf_a, self.conf_b, self.dist_2d)
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite observation for view {self.view_id}")
        if not (0.0 <= self.w_i <= 1.0):
            raise ValidationError(f"w_i={self.w_i} outside [0, 1]")
        if self.dist_2d < 0:
            raise ValidationError(f"dist_2d={self.dist_2d} negative")
        return self


@dataclass(frozen=True)
class GraphBuildConfig:
    adjacency: AdjacencyConfig = AdjacencyConfig()
    prompt_k: int = 5
    samples_per_view: int = 5
    seed: int = 0
    max_views_per_edge: int | None = None  # None = use every co-visible view


def default_adjacency(scene: SceneGeometry) -> AdjacencyConfig:
    mode = AdjacencyMode.MESH_SHARED_EDGE if scene.is_mesh else AdjacencyMode.DISTANCE
    return AdjacencyConfig(mode=mode)


def build_adjacency(
    scene: SceneGeometry,
    superpoints: list[Superpoint],
    config: AdjacencyConfig,
) -> list[tuple[int, int]]:
    """Canonical (u < v) superpoint adjacency pairs."""
    config.validate()
    if config.mode is AdjacencyMode.MESH_SHARED_EDGE:
        if not scene.is_mesh:
            raise ValidationError("MESH_SHARED_EDGE adjacency requires faces")
        sp_of = np.full(scene.num_points, -1, dtype=np.int64)
        for sp in superpoints:
            sp_of[sp.point_indices] = sp.sp_id
        from .presegment import mesh_edges

        edges = mesh_edges(scene.faces)
        su, sv = sp_of[edges[:, 0]], sp_of[edges[:, 1]]
        diff = su != sv
        pairs = np.sort(np.column_stack([su[diff], sv[diff]]), axis=1)
        return [tuple(map(int, p)) for p in np.unique(pairs, axis=0)]

    # DISTANCE mode: bounding-box prefilter, then exact min distance per pair
    thr = config.distance_threshold
    ordered = sorted(superpoints, key=lambda sp: sp.sp_id)
    mins = np.stack([scene.points[sp.point_indices].min(axis=0) for sp in ordered])
    maxs = np.stack([scene.points[sp.point_indices].max(axis=0) for sp in ordered])
    n = len(ordered)
    overlap = np.ones((n, n), dtype=bool)
    for axis in range(3):
        overlap &= mins[None, :, axis] <= maxs[:, None, axis] + thr
        overlap &= mins[:, None, axis] <= maxs[None, :, axis] + thr
    cand = np.column_stack(np.nonzero(np.triu(overlap, k=1)))
    trees = [cKDTree(scene.points[sp.point_indices]) for sp in ordered]
    result: list[tuple[int, int]] = []
    for a, b in cand:
        small, big = (a, b) if ordered[a].size <= ordered[b].size else (b, a)
        dists, _ = trees[big].query(scene.points[ordered[small].point_indices],
                                    k=1, distance_upper_bound=thr)
        if np.any(dists < thr):
            result.append((ordered[a].sp_id, ordered[b].sp_id))
    return sorted((min(u, v), max(u, v)) for u, v in result)


def single_view_weight(mask_a: MaskCandidate, mask_b: MaskCandidate) -> float:
    """max(|A∩B|/|A|, |A∩B|/|B|) for two selected masks of one view."""
    inter = mask_a.mask.intersection_area(mask_b.mask)
    return max(inter / mask_a.area, inter / mask_b.area)


def aggregation_coefficients(observations: list[EdgeObservation]) -> np.ndarray:
    """L1-normalized per-view scores (uniform when every score is zero)."""
    if not observations:
        return np.zeros(0, dtype=np.float64)
    scores = np.array(
        [o.dist_2d * o.conf_a * o.conf_b for o in observations], dtype=np.float64
    )
    total = scores.sum()
    if total <= 0.0:
        return np.full(len(observations), 1.0 / len(observations))
    return scores / total


def aggregate_edge_weight(observations: list[EdgeObservation]) -> float:
    """Coefficient-weighted mean of per-view weights; 0 with no observations."""
    if not observations:
        return 0.0
    coeffs = aggregation_coefficients(observations)
    weights = np.array([o.w_i for o in observations], dtype=np.float64)
    return float(coeffs @ weights)


def compute_node_feature(
    sp_id: int,
    visibility: VisibilityIndex,
    feature_store: FeatureStore,
    image_dims: dict[int, tuple[int, int]],
    samples_per_view: int = 5,
    seed: int = 0,
) -> tuple[np.ndarray, bool]:
    """Mean of bilinearly-interpolated features at sampled mask pixels.

    Returns (feature float32 (256,), invisible_everywhere flag); the flag
    marks the zero vector a superpoint gets when no view sees it.
    """
    view_ids = visibility.views_seeing(sp_id)
    if not view_ids:
        from .model import FEATURE_DIM

        return np.zeros(FEATURE_DIM, dtype=np.float32), True
    per_view = []
    for view_id in view_ids:
        mask = visibility.mask(sp_id, view_id)
        pixels = mask.pixel_array()
        rng = derive_rng(seed, TAG_FEATURE_SAMPLES, view_id, sp_id)
        sel = rng.integers(0, pixels.shape[0], size=samples_per_view)
        fm = feature_store.get(view_id, sp_id)
        feats = interpolate_features(fm, pixels[sel], image_dims[view_id])
        per_view.append(feats.mean(axis=0))
    return np.mean(per_view, axis=0).astype(np.float32), False


class _SelectedMasks:
    """Caches prompt sampling + oracle query + scale selection per (view, sp)."""

    def __init__(self, visibility: VisibilityIndex, oracle, prompt_k: int) -> None:
        self.visibility = visibility
        self.oracle = oracle
        self.prompt_k = prompt_k
        self.prompts: dict[tuple[int, int], PromptSet] = {}
        self.selected: dict[tuple[int, int], MaskCandidate] = {}

    def fetch(self, view_id: int, sp_id: int, context: str = "") -> MaskCandidate:
        key = (view_id, sp_id)
        if key in self.selected:
            return self.selected[key]
        prompt = sample_prompts(self.visibility.mask(sp_id, view_id), self.prompt_k)
        try:
            resp = self.oracle.query_prompt(view_id, prompt)
        except MissingOracleDataError as exc:
            raise MissingOracleDataError(exc.view_id, exc.sp_id, context) from None
        except OracleFormatError as exc:
            raise OracleFormatError(f"{exc} [{context}]" if context else str(exc)) from None
        self.prompts[key] = prompt
        self.selected[key] = select_mask(resp)
        return self.selected[key]


def annotate_graph(
    scene: SceneGeometry,
    superpoints: list[Superpoint],
    views: list[CameraView],
    oracle,
    feature_store: FeatureStore,
    config: GraphBuildConfig = GraphBuildConfig(),
    projection_config: ProjectionConfig = ProjectionConfig(),
    visibility: VisibilityIndex | None = None,
    renders: dict[int, RenderResult] | None = None,
    threads: int = 1,
) -> SuperpointGraph:
    """Adjacency edges + aggregated oracle weights + node features."""
    if visibility is None:
        if renders is None:
            renders = render_all_views(scene, views, threads=threads)
        visibility = build_visibility(
            scene, superpoints, views, projection_config, renders, threads=threads
        )
    adjacency = build_adjacency(scene, superpoints, config.adjacency)

    edge_views: list[tuple[int, int, list[int]]] = []
    needed: dict[tuple[int, int], str] = {}
    for u, v in adjacency:
        covis = visibility.covisible_views(u, v)
        if config.max_views_per_edge is not None:
            covis = covis[: config.max_views_per_edge]
        edge_views.append((u, v, covis))
        for view_id in covis:
            for sp_id in (u, v):
                needed.setdefault((view_id, sp_id), f"edge ({u}, {v})")

    cache = _SelectedMasks(visibility, oracle, config.prompt_k)
    items = sorted(needed.items())
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda kv: cache.fetch(kv[0][0], kv[0][1], kv[1]), items))
    else:
        for (view_id, sp_id), ctx in items:
            cache.fetch(view_id, sp_id, ctx)

    edges: list[GraphEdge] = []
    for u, v, covis in edge_views:
        observations: list[EdgeObservation] = []
        for view_id in covis:
            sel_u = cache.fetch(view_id, u)
            sel_v = cache.fetch(view_id, v)
            dist = superpoint_distance_2d(
                visibility.mask(u, view_id), visibility.mask(v, view_id)
            )
            observations.append(
                EdgeObservation(
                    view_id=view_id,
                    w_i=single_view_weight(sel_u, sel_v),
                    conf_a=sel_u.confidence,
                    conf_b=sel_v.confidence,
                    dist_2d=dist,
                ).validate()
            )
        w_sam = float(np.float32(aggregate_edge_weight(observations)))
        edges.append(GraphEdge(u=u, v=v, w_sam=w_sam))

    image_dims = {view.view_id: (view.height, view.width) for view in views}
    nodes: list[GraphNode] = []
    for sp in sorted(superpoints, key=lambda s: s.sp_id):
        feature, _invisible = compute_node_feature(
            sp.sp_id,
            visibility,
            feature_store,
            image_dims,
            samples_per_view=config.samples_per_view,
            seed=config.seed,
        )
        nodes.append(GraphNode(sp_id=sp.sp_id, feature=feature))

    return SuperpointGraph(nodes=nodes, edges=edges).validate()
