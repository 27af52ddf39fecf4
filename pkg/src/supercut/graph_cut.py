"""Final partition: threshold + 2-hop consistency veto, then union-find.

An edge scoring below the threshold τ is cut outright.  An edge at or
above τ is additionally vetoed when too many of the length-2 paths
around it are inconsistent: among common neighbours of its endpoints,
count paths whose two edge scores are both ≥ τ (``n_hh``) or exactly
one ≥ τ (``n_mixed``); the edge is cut when
``n_mixed / (n_hh + n_mixed) > ρ``.  Paths with both scores below τ
belong to neither count.  Surviving edges are merged with union-find;
each component becomes one instance whose confidence is the mean score
of its internal connected edges (1.0 for singletons).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    NONE_ID,
    Instance,
    InstanceSegmentation,
    Superpoint,
    SuperpointGraph,
    ValidationError,
)
from .presegment import UnionFind

__all__ = ["CutConfig", "UnionFind", "decide_connections", "partition", "segment_graph"]


@dataclass(frozen=True)
class CutConfig:
    affinity_threshold: float = 0.5  # τ
    veto_ratio: float = 0.25  # ρ
    use_affinity: bool = True  # False → cut on raw w_sam

    def validate(self) -> "CutConfig":
        if not (0.0 <= self.affinity_threshold <= 1.0):
            raise ValidationError(f"affinity_threshold {self.affinity_threshold} outside [0, 1]")
        if not (0.0 <= self.veto_ratio <= 1.0):
            raise ValidationError(f"veto_ratio {self.veto_ratio} outside [0, 1]")
        return self


def _edge_scores(graph: SuperpointGraph, config: CutConfig) -> dict[tuple[int, int], float]:
    scores: dict[tuple[int, int], float] = {}
    for e in graph.edges:
        score = e.affinity if config.use_affinity else e.w_sam
        if score is None:
            kind = "affinity" if config.use_affinity else "w_sam"
            raise ValidationError(f"edge ({e.u}, {e.v}) has no {kind}")
        scores[(e.u, e.v)] = score
    return scores


def decide_connections(
    graph: SuperpointGraph, config: CutConfig = CutConfig()
) -> dict[tuple[int, int], bool]:
    """Per-edge keep/cut decision, keyed by canonical edge."""
    config.validate()
    scores = _edge_scores(graph, config)
    tau, rho = config.affinity_threshold, config.veto_ratio
    neighbors = graph.neighbors()

    def score_of(a: int, b: int) -> float:
        return scores[(a, b) if a < b else (b, a)]

    decisions: dict[tuple[int, int], bool] = {}
    for (u, v), s in scores.items():
        if s < tau:
            decisions[(u, v)] = False
            continue
        n_hh = n_mixed = 0
        for w in neighbors[u] & neighbors[v]:
            high_uw = score_of(u, w) >= tau
            high_vw = score_of(v, w) >= tau
            if high_uw and high_vw:
                n_hh += 1
            elif high_uw or high_vw:
                n_mixed += 1
        total = n_hh + n_mixed
        decisions[(u, v)] = not (total > 0 and n_mixed / total > rho)
    return decisions


def partition(
    superpoints: list[Superpoint],
    graph: SuperpointGraph,
    connections: dict[tuple[int, int], bool],
    config: CutConfig = CutConfig(),
    num_points: int | None = None,
) -> InstanceSegmentation:
    """Union-find merge of connected edges into per-point instances."""
    sp_ids = sorted(sp.sp_id for sp in superpoints)
    slot = {sp_id: i for i, sp_id in enumerate(sp_ids)}
    uf = UnionFind(len(sp_ids))
    for (u, v), connected in connections.items():
        if connected:
            uf.union(slot[u], slot[v])

    scores = _edge_scores(graph, config)
    component_of: dict[int, int] = {}  # union-find root -> instance id
    members: dict[int, list[int]] = {}
    for sp_id in sp_ids:
        root = uf.find(slot[sp_id])
        members.setdefault(root, []).append(sp_id)
    # deterministic instance ids: components ordered by smallest sp_id
    instance_sum: dict[int, float] = {}
    instance_count: dict[int, int] = {}
    for inst_id, root in enumerate(sorted(members, key=lambda r: min(members[r]))):
        component_of[root] = inst_id
        instance_sum[inst_id] = 0.0
        instance_count[inst_id] = 0
    for (u, v), connected in connections.items():
        if connected:
            inst_id = component_of[uf.find(slot[u])]
            instance_sum[inst_id] += scores[(u, v)]
            instance_count[inst_id] += 1

    if num_points is None:
        num_points = 1 + max(int(sp.point_indices.max()) for sp in superpoints)
    assignment = np.full(num_points, NONE_ID, dtype=np.int64)
    for sp in superpoints:
        assignment[sp.point_indices] = component_of[uf.find(slot[sp.sp_id])]

    instances = [
        Instance(
            instance_id=inst_id,
            confidence=(
                instance_sum[inst_id] / instance_count[inst_id]
                if instance_count[inst_id]
                else 1.0
            ),
        )
        for inst_id in sorted(instance_sum)
    ]
    return InstanceSegmentation(assignment=assignment, instances=instances).validate()


def segment_graph(
    superpoints: list[Superpoint],
    graph: SuperpointGraph,
    config: CutConfig = CutConfig(),
    num_points: int | None = None,
) -> InstanceSegmentation:
    """decide_connections + partition in one call."""
    connections = decide_connections(graph, config)
    return partition(superpoints, graph, connections, config, num_points)
