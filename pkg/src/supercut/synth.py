"""Deterministic synthetic scenes: a walled room with box/cylinder objects,
an inward-facing camera ring, and synthetic stand-ins for every external
data source (instance maps, feature maps, rendered images, oracle store).

Objects are sampled without bottom faces (they sit on the floor and the
bottom is never visible), with exact analytic normals so the
over-segmentation stays clean.  Object colors come from a deliberately
small palette — distinct instances frequently share a color, which keeps
appearance features from trivially separating instances.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    FLOOR_ID,
    WALL_ID,
    CameraView,
    SceneGeometry,
    Superpoint,
    ValidationError,
)
from .oracle import (
    FeatureMap,
    NoiseConfig,
    OracleStoreWriter,
    SyntheticOracle,
    fmap_path,
    sample_prompts,
    save_fmap,
)
from .projection import RenderResult, VisibilityIndex
from .pseudo_label import InstanceMapStore
from .rng import TAG_IMAP_NOISE, TAG_SCENE, derive_rng

PALETTE = np.array(
    [
        [0.85, 0.30, 0.25],
        [0.25, 0.55, 0.85],
        [0.35, 0.70, 0.35],
        [0.80, 0.70, 0.25],
    ]
)
FLOOR_COLOR = (0.50, 0.50, 0.50)
WALL_COLOR = (0.70, 0.70, 0.70)

DEPTH_NORM = 8.0  # meters mapped to 1.0 in synthetic feature maps
FEATURE_GRID_DIV = 8

PLACEMENT_ATTEMPTS = 1000
OBJECT_GAP = 0.05  # meters between object bounding boxes
WALL_CLEARANCE = 0.15
# Objects stay inside a central disk well within the camera ring so that
# every face of every object is imaged by the cameras behind it; a corner
# object would show its outward sides to no camera at all.
PLACEMENT_RADIUS_FRAC = 0.30
RING_RADIUS_FRAC = 0.45


@dataclass(frozen=True)
class SynthConfig:
    num_objects: int = 8
    room_size: float = 4.0
    points_per_object: int = 2200
    points_on_walls_floor: int = 9000
    camera_count: int = 24
    seed: int = 0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    wall_height: float = 2.0
    image_width: int = 384
    image_height: int = 288
    focal: float = 240.0

    def validate(self) -> "SynthConfig":
        if self.num_objects < 1 or self.points_per_object < 1:
            raise ValidationError("num_objects and points_per_object must be >= 1")
        if self.points_on_walls_floor < 1 or self.camera_count < 1:
            raise ValidationError("points_on_walls_floor and camera_count must be >= 1")
        if self.room_size <= 1.0:
            raise ValidationError("room_size must exceed 1 meter")
        self.noise.validate()
        return self


@dataclass
class _PlacedObject:
    kind: str  # "box" or "cylinder"
    center: np.ndarray  # (x, y) on the floor
    half_x: float
    half_y: float
    height: float
    color: np.ndarray


def _split_counts(total: int, weights: np.ndarray) -> np.ndarray:
    """Deterministic proportional split of `total` into len(weights) parts."""
    raw = weights / weights.sum() * total
    counts = np.floor(raw).astype(np.int64)
    remainder = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:remainder]] += 1
    return np.maximum(counts, 1)


def _sample_rect(
    rng: np.random.Generator, count: int, origin, edge_a, edge_b, normal
) -> tuple[np.ndarray, np.ndarray]:
    u = rng.uniform(size=(count, 1))
    v = rng.uniform(size=(count, 1))
    pts = np.asarray(origin) + u * np.asarray(edge_a) + v * np.asarray(edge_b)
    return pts, np.tile(np.asarray(normal, dtype=np.float64), (count, 1))


def _sample_box(rng: np.random.Generator, obj: _PlacedObject, count: int):
    cx, cy = obj.center
    hx, hy, h = obj.half_x, obj.half_y, obj.height
    faces = [
        # origin, edge_a, edge_b, outward normal (top + 4 sides, no bottom)
        ((cx - hx, cy - hy, h), (2 * hx, 0, 0), (0, 2 * hy, 0), (0, 0, 1)),
        ((cx - hx, cy - hy, 0), (2 * hx, 0, 0), (0, 0, h), (0, -1, 0)),
        ((cx - hx, cy + hy, 0), (2 * hx, 0, 0), (0, 0, h), (0, 1, 0)),
        ((cx - hx, cy - hy, 0), (0, 2 * hy, 0), (0, 0, h), (-1, 0, 0)),
        ((cx + hx, cy - hy, 0), (0, 2 * hy, 0), (0, 0, h), (1, 0, 0)),
    ]
    areas = np.array(
        [4 * hx * hy, 4 * hx * h, 4 * hx * h, 4 * hy * h, 4 * hy * h], dtype=np.float64
    ) / 2.0
    counts = _split_counts(count, areas)
    pts, nrm = [], []
    for (origin, ea, eb, n), c in zip(faces, counts):
        p, nn = _sample_rect(rng, int(c), origin, ea, eb, n)
        pts.append(p)
        nrm.append(nn)
    return np.concatenate(pts), np.concatenate(nrm)


def _sample_cylinder(rng: np.random.Generator, obj: _PlacedObject, count: int):
    cx, cy = obj.center
    r, h = obj.half_x, obj.height
    side_area = 2 * np.pi * r * h
    top_area = np.pi * r * r
    counts = _split_counts(count, np.array([side_area, top_area]))
    theta = rng.uniform(0, 2 * np.pi, size=int(counts[0]))
    z = rng.uniform(0, h, size=int(counts[0]))
    side = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta), z])
    side_n = np.column_stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)])
    theta_t = rng.uniform(0, 2 * np.pi, size=int(counts[1]))
    rad = r * np.sqrt(rng.uniform(size=int(counts[1])))
    top = np.column_stack(
        [cx + rad * np.cos(theta_t), cy + rad * np.sin(theta_t), np.full_like(theta_t, h)]
    )
    top_n = np.tile((0.0, 0.0, 1.0), (int(counts[1]), 1))
    return np.concatenate([side, top]), np.concatenate([side_n, top_n])


def _place_objects(rng: np.random.Generator, config: SynthConfig) -> list[_PlacedObject]:
    placed: list[_PlacedObject] = []
    size = config.room_size
    for _ in range(config.num_objects):
        ok = False
        for _attempt in range(PLACEMENT_ATTEMPTS):
            kind = "box" if rng.uniform() < 0.5 else "cylinder"
            if kind == "box":
                hx = rng.uniform(0.12, 0.28)
                hy = rng.uniform(0.12, 0.28)
            else:
                hx = hy = rng.uniform(0.13, 0.25)
            height = rng.uniform(0.3, 0.7)
            margin_x = hx + WALL_CLEARANCE
            margin_y = hy + WALL_CLEARANCE
            cx = rng.uniform(margin_x, size - margin_x)
            cy = rng.uniform(margin_y, size - margin_y)
            if np.hypot(cx - size / 2, cy - size / 2) > PLACEMENT_RADIUS_FRAC * size:
                continue
            clash = False
            for other in placed:
                if (
                    abs(cx - other.center[0]) < hx + other.half_x + OBJECT_GAP
                    and abs(cy - other.center[1]) < hy + other.half_y + OBJECT_GAP
                ):
                    clash = True
                    break
            if not clash:
                color = PALETTE[rng.integers(len(PALETTE))]
                placed.append(
                    _PlacedObject(kind, np.array([cx, cy]), hx, hy, height, color)
                )
                ok = True
                break
        if not ok:
            raise ValidationError(
                f"could not place {config.num_objects} objects without overlap "
                f"in a {size} m room; try fewer objects"
            )
    return placed


def _lookat(eye: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    x_cam = np.cross(forward, up)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(forward, x_cam)
    y_cam /= np.linalg.norm(y_cam)
    rotation = np.stack([x_cam, y_cam, forward])
    return rotation, -rotation @ eye


def generate(config: SynthConfig) -> tuple[SceneGeometry, list[CameraView]]:
    """Room + objects + camera ring, bit-for-bit reproducible from the seed."""
    config.validate()
    rng = derive_rng(config.seed, TAG_SCENE)
    size = config.room_size
    objects = _place_objects(rng, config)

    points, normals, colors, gt = [], [], [], []
    for idx, obj in enumerate(objects):
        sampler = _sample_box if obj.kind == "box" else _sample_cylinder
        pts, nrm = sampler(rng, obj, config.points_per_object)
        points.append(pts)
        normals.append(nrm)
        colors.append(np.tile(obj.color, (pts.shape[0], 1)))
        gt.append(np.full(pts.shape[0], idx, dtype=np.int64))

    floor_area = size * size
    wall_area = 4 * size * config.wall_height
    counts = _split_counts(
        config.points_on_walls_floor, np.array([floor_area, wall_area])
    )
    fl, fn = _sample_rect(rng, int(counts[0]), (0, 0, 0), (size, 0, 0), (0, size, 0), (0, 0, 1))
    points.append(fl)
    normals.append(fn)
    colors.append(np.tile(FLOOR_COLOR, (fl.shape[0], 1)))
    gt.append(np.full(fl.shape[0], FLOOR_ID, dtype=np.int64))

    hw = config.wall_height
    walls = [
        ((0, 0, 0), (0, size, 0), (0, 0, hw), (1, 0, 0)),
        ((size, 0, 0), (0, size, 0), (0, 0, hw), (-1, 0, 0)),
        ((0, 0, 0), (size, 0, 0), (0, 0, hw), (0, 1, 0)),
        ((0, size, 0), (size, 0, 0), (0, 0, hw), (0, -1, 0)),
    ]
    per_wall = _split_counts(int(counts[1]), np.ones(4))
    for (origin, ea, eb, n), c in zip(walls, per_wall):
        wp, wn = _sample_rect(rng, int(c), origin, ea, eb, n)
        points.append(wp)
        normals.append(wn)
        colors.append(np.tile(WALL_COLOR, (wp.shape[0], 1)))
        gt.append(np.full(wp.shape[0], WALL_ID, dtype=np.int64))

    scene = SceneGeometry(
        points=np.concatenate(points),
        normals=np.concatenate(normals),
        colors=np.concatenate(colors),
        gt_instance=np.concatenate(gt),
    ).validate()

    center = np.array([size / 2.0, size / 2.0, 0.35])
    ring_radius = RING_RADIUS_FRAC * size
    views = []
    for i in range(config.camera_count):
        phi = 2.0 * np.pi * i / config.camera_count
        eye = np.array(
            [size / 2.0 + ring_radius * np.cos(phi), size / 2.0 + ring_radius * np.sin(phi), 1.45]
        )
        rotation, translation = _lookat(eye, center)
        views.append(
            CameraView(
                view_id=i,
                fx=config.focal,
                fy=config.focal,
                cx=config.image_width / 2.0,
                cy=config.image_height / 2.0,
                rotation=rotation,
                translation=translation,
                width=config.image_width,
                height=config.image_height,
            ).validate()
        )
    return scene, views


# ---------------------------------------------------------------------------
# Synthetic per-view data (instance maps, feature maps, rendered images)


def view_id_map(scene: SceneGeometry, render: RenderResult) -> np.ndarray:
    """Per-pixel GT instance id (NONE/-1 where no geometry was rendered)."""
    pidx = render.point_index
    ids = np.full(pidx.shape, -1, dtype=np.int64)
    hit = pidx >= 0
    ids[hit] = scene.gt_instance[pidx[hit]]
    return ids


def _relabel_view_local(ids: np.ndarray) -> np.ndarray:
    """GT ids (incl. floor/wall) -> 1..K in sorted-id order; empty pixels -> 0."""
    labels = np.zeros(ids.shape, dtype=np.int64)
    present = sorted(int(v) for v in np.unique(ids) if v != -1)
    for local, gt_id in enumerate(present, start=1):
        labels[ids == gt_id] = local
    return labels


def _corrupt_labels(
    labels: np.ndarray, noise: NoiseConfig, rng: np.random.Generator
) -> np.ndarray:
    """Merge regions into their nearest neighbour / split regions in half."""
    out = labels.copy()
    original = sorted(int(v) for v in np.unique(labels) if v > 0)
    if len(original) == 0:
        return out
    centroids = {}
    for lab in original:
        rs, cs = np.nonzero(labels == lab)
        centroids[lab] = (rs.mean(), cs.mean())
    next_label = max(original) + 1
    for lab in original:
        do_merge = rng.uniform() < noise.p_merge
        do_split = rng.uniform() < noise.p_split
        if do_merge and len(original) > 1:
            others = [o for o in original if o != lab]
            dists = [
                (centroids[lab][0] - centroids[o][0]) ** 2
                + (centroids[lab][1] - centroids[o][1]) ** 2
                for o in others
            ]
            partner = others[int(np.argmin(dists))]
            out[out == lab] = partner
        if do_split:
            rs, cs = np.nonzero(out == lab)
            if rs.size >= 2:
                theta = rng.uniform(0, 2 * np.pi)
                proj = (rs - rs.mean()) * np.cos(theta) + (cs - cs.mean()) * np.sin(theta)
                half = proj > 0
                if half.any() and not half.all():
                    out[rs[half], cs[half]] = next_label
                    next_label += 1
    return out


def make_instance_maps(
    scene: SceneGeometry,
    views: list[CameraView],
    renders: dict[int, RenderResult],
    noise: NoiseConfig = NoiseConfig(),
    seed: int = 0,
) -> InstanceMapStore:
    """View-local instance label images, optionally corrupted."""
    maps = {}
    for view in views:
        labels = _relabel_view_local(view_id_map(scene, renders[view.view_id]))
        if noise.enabled:
            rng = derive_rng(seed, TAG_IMAP_NOISE, view.view_id)
            labels = _corrupt_labels(labels, noise, rng)
        maps[view.view_id] = labels
    return InstanceMapStore(maps).validate(views)


def make_feature_maps(
    scene: SceneGeometry,
    views: list[CameraView],
    renders: dict[int, RenderResult],
) -> dict[int, FeatureMap]:
    """Block-averaged color/normal/depth channels embedded in 256-dim maps."""
    from .model import FEATURE_DIM

    maps = {}
    colors = scene.colors if scene.colors is not None else np.zeros((scene.num_points, 3))
    for view in views:
        render = renders[view.view_id]
        pidx = render.point_index
        h, w = pidx.shape
        attrs = np.zeros((h, w, 8), dtype=np.float64)
        hit = pidx >= 0
        attrs[hit, 0:3] = colors[pidx[hit]]
        attrs[hit, 3:6] = scene.normals[pidx[hit]]
        attrs[hit, 6] = np.clip(render.depth[hit] / DEPTH_NORM, 0.0, 1.0)
        attrs[hit, 7] = 1.0
        div = FEATURE_GRID_DIV
        hf, wf = h // div, w // div
        pooled = attrs[: hf * div, : wf * div].reshape(hf, div, wf, div, 8).mean(axis=(1, 3))
        data = np.zeros((hf, wf, FEATURE_DIM), dtype=np.float32)
        data[:, :, :8] = pooled
        maps[view.view_id] = FeatureMap(view_id=view.view_id, data=data).validate()
    return maps


def instance_color_table(scene: SceneGeometry) -> dict[int, tuple[int, int, int]]:
    """Bijective GT-id -> RGB table for rendered images (background is black)."""
    ids = sorted(int(v) for v in np.unique(scene.gt_instance))
    table: dict[int, tuple[int, int, int]] = {}
    for rank, gt_id in enumerate(ids):
        r, g, b = colorsys.hsv_to_rgb(rank / max(len(ids), 1), 1.0, 1.0)
        rgb = (int(round(r * 200)) + 55, int(round(g * 200)) + 55, int(round(b * 200)) + 55)
        table[gt_id] = rgb
    if len(set(table.values())) != len(table):
        raise ValidationError("instance color table collision; too many instances")
    return table


def render_images(
    scene: SceneGeometry,
    views: list[CameraView],
    renders: dict[int, RenderResult],
    out_dir: str | Path,
) -> None:
    """Flat-colored PNG per view (one distinct color per GT instance)."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = instance_color_table(scene)
    for view in views:
        ids = view_id_map(scene, renders[view.view_id])
        img = np.zeros((*ids.shape, 3), dtype=np.uint8)
        for gt_id, rgb in table.items():
            img[ids == gt_id] = rgb
        Image.fromarray(img).save(out_dir / f"view_{view.view_id}.png")


def export_synthetic_store(
    scene: SceneGeometry,
    views: list[CameraView],
    superpoints: list[Superpoint],
    visibility: VisibilityIndex,
    renders: dict[int, RenderResult],
    out_dir: str | Path,
    noise: NoiseConfig = NoiseConfig(),
    seed: int = 0,
    prompt_k: int = 5,
) -> None:
    """Write oracle store + feature maps + instance maps for a synthetic scene."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    oracle = SyntheticOracle(scene, views, renders, noise=noise, seed=seed)
    with OracleStoreWriter(out_dir) as writer:
        for sp in sorted(superpoints, key=lambda s: s.sp_id):
            for view_id in visibility.views_seeing(sp.sp_id):
                prompt = sample_prompts(visibility.mask(sp.sp_id, view_id), prompt_k)
                writer.add(view_id, sp.sp_id, oracle.query(view_id, prompt))
    for view_id, fm in sorted(make_feature_maps(scene, views, renders).items()):
        save_fmap(fm, fmap_path(out_dir, view_id))
    make_instance_maps(scene, views, renders, noise=noise, seed=seed).save(out_dir)
