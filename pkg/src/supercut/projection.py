"""Camera projection of superpoints with z-buffer occlusion handling.

Conventions (fixed by this package, documented rather than inherited):
world-to-camera transform ``X_cam = R @ X + t`` with +z forward;
``col = fx * x / z + cx``, ``row = fy * y / z + cy``; a point lands in
the pixel nearest its projection (rounded row/col).

Depth maps are float64, +inf where nothing is rendered.  Point clouds
are splatted with a 3x3 pixel footprint; meshes are rasterized with
perspective-correct interpolation.  For point clouds the renderer also
keeps the index of the nearest point per pixel (ties broken by lowest
point index), which downstream synthetic renderers reuse for label and
attribute images.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import CameraView, SceneGeometry, Superpoint, ValidationError

Z_EPS = 1e-6


@dataclass(frozen=True)
class ProjectionConfig:
    occlusion_tol: float = 0.03  # meters
    min_visible_pixels: int = 50


@dataclass
class RenderResult:
    view_id: int
    depth: np.ndarray  # (H, W) float64, +inf empty
    point_index: np.ndarray | None  # (H, W) int64, -1 empty; None in mesh mode


def _splat_coords(rows: np.ndarray, cols: np.ndarray, height: int, width: int):
    """3x3 footprints of integer pixel centers, clipped to the image."""
    offs = np.array([-1, 0, 1])
    rr = np.broadcast_to(
        rows[:, None, None] + offs[None, :, None], (len(rows), 3, 3)
    ).reshape(len(rows), 9)
    cc = np.broadcast_to(
        cols[:, None, None] + offs[None, None, :], (len(cols), 3, 3)
    ).reshape(len(cols), 9)
    valid = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
    return rr, cc, valid


def _project_to_pixels(view: CameraView, points: np.ndarray):
    """Returns (rows, cols, z, in_front_and_in_bounds) with integer pixels."""
    rows_f, cols_f, z = view.project(points)
    ok = z > Z_EPS
    rows = np.full(points.shape[0], -1, dtype=np.int64)
    cols = np.full(points.shape[0], -1, dtype=np.int64)
    rows[ok] = np.round(rows_f[ok]).astype(np.int64)
    cols[ok] = np.round(cols_f[ok]).astype(np.int64)
    ok &= (rows >= 0) & (rows < view.height) & (cols >= 0) & (cols < view.width)
    return rows, cols, z, ok


def render_view(scene: SceneGeometry, view: CameraView) -> RenderResult:
    """Z-buffer render; point mode also produces the nearest-point index map."""
    height, width = view.height, view.width
    depth = np.full((height, width), np.inf, dtype=np.float64)
    if scene.is_mesh:
        _rasterize_mesh(scene, view, depth)
        return RenderResult(view_id=view.view_id, depth=depth, point_index=None)

    rows, cols, z, ok = _project_to_pixels(view, scene.points)
    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        return RenderResult(
            view_id=view.view_id,
            depth=depth,
            point_index=np.full((height, width), -1, dtype=np.int64),
        )
    rr, cc, valid = _splat_coords(rows[idx], cols[idx], height, width)
    zz = np.broadcast_to(z[idx][:, None], rr.shape)
    pp = np.broadcast_to(idx[:, None], rr.shape)
    rf, cf, zf, pf = rr[valid], cc[valid], zz[valid], pp[valid]
    np.minimum.at(depth, (rf, cf), zf)
    # second pass: among splats matching the winning depth, lowest point index
    winner = np.full((height, width), np.iinfo(np.int64).max, dtype=np.int64)
    at_min = zf == depth[rf, cf]
    np.minimum.at(winner, (rf[at_min], cf[at_min]), pf[at_min])
    point_index = np.where(np.isinf(depth), -1, winner)
    return RenderResult(view_id=view.view_id, depth=depth, point_index=point_index)


def _rasterize_mesh(scene: SceneGeometry, view: CameraView, depth: np.ndarray) -> None:
    """Perspective-correct triangle z-buffering into ``depth`` (in place).

    Triangles with any vertex at or behind the camera plane are skipped
    (no near-plane clipping); fixtures keep geometry fully in front.
    """
    height, width = depth.shape
    cam = view.to_camera(scene.points)
    z = cam[:, 2]
    cols = view.fx * cam[:, 0] / np.where(z > Z_EPS, z, 1.0) + view.cx
    rows = view.fy * cam[:, 1] / np.where(z > Z_EPS, z, 1.0) + view.cy
    for face in scene.faces:
        tz = z[face]
        if np.any(tz <= Z_EPS):
            continue
        tr, tc = rows[face], cols[face]
        r0 = max(int(np.floor(tr.min())), 0)
        r1 = min(int(np.ceil(tr.max())), height - 1)
        c0 = max(int(np.floor(tc.min())), 0)
        c1 = min(int(np.ceil(tc.max())), width - 1)
        if r0 > r1 or c0 > c1:
            continue
        area = (tc[1] - tc[0]) * (tr[2] - tr[0]) - (tr[1] - tr[0]) * (tc[2] - tc[0])
        if abs(area) < 1e-12:
            continue
        gc, gr = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        w0 = (tc[2] - tc[1]) * (gr - tr[1]) - (tr[2] - tr[1]) * (gc - tc[1])
        w1 = (tc[0] - tc[2]) * (gr - tr[2]) - (tr[0] - tr[2]) * (gc - tc[2])
        w2 = (tc[1] - tc[0]) * (gr - tr[0]) - (tr[1] - tr[0]) * (gc - tc[0])
        inside = (
            ((w0 >= 0) & (w1 >= 0) & (w2 >= 0))
            if area > 0
            else ((w0 <= 0) & (w1 <= 0) & (w2 <= 0))
        )
        if not inside.any():
            continue
        l0, l1, l2 = w0 / area, w1 / area, w2 / area
        inv_z = l0 / tz[0] + l1 / tz[1] + l2 / tz[2]
        tile = depth[r0 : r1 + 1, c0 : c1 + 1]
        with np.errstate(divide="ignore"):
            zpix = np.where(inside & (inv_z > 0), 1.0 / inv_z, np.inf)
        np.minimum(tile, zpix, out=tile)


def render_depth(scene: SceneGeometry, view: CameraView) -> np.ndarray:
    """Depth map only (meters, +inf where empty)."""
    return render_view(scene, view).depth


@dataclass
class ProjectionMask:
    """Pixels where one superpoint is visible in one view (cropped bitmap)."""

    view_id: int
    sp_id: int
    row0: int
    col0: int
    bitmap: np.ndarray  # 2D bool crop; absolute pixel = (row0 + i, col0 + j)
    pixel_count: int = field(init=False)
    centroid_2d: tuple[float, float] = field(init=False)

    def __post_init__(self) -> None:
        self.bitmap = np.ascontiguousarray(self.bitmap, dtype=bool)
        rs, cs = np.nonzero(self.bitmap)
        self.pixel_count = int(rs.size)
        if rs.size:
            self.centroid_2d = (
                float(rs.mean() + self.row0),
                float(cs.mean() + self.col0),
            )
        else:
            self.centroid_2d = (float("nan"), float("nan"))

    def pixel_array(self) -> np.ndarray:
        """Absolute (row, col) pairs, row-major order, shape (pixel_count, 2)."""
        rs, cs = np.nonzero(self.bitmap)
        return np.column_stack([rs + self.row0, cs + self.col0])

    def to_full(self, height: int, width: int) -> np.ndarray:
        full = np.zeros((height, width), dtype=bool)
        h, w = self.bitmap.shape
        full[self.row0 : self.row0 + h, self.col0 : self.col0 + w] = self.bitmap
        return full


NOT_VISIBLE = None


def project_superpoint(
    scene: SceneGeometry,
    sp: Superpoint,
    view: CameraView,
    depth: np.ndarray,
    config: ProjectionConfig = ProjectionConfig(),
) -> ProjectionMask | None:
    """Project one superpoint against a rendered depth map.

    Member points survive when inside the frustum and within
    ``occlusion_tol`` of the depth buffer; the mask is the union of the
    survivors' 3x3 footprints.  Returns None (NOT_VISIBLE) when the mask
    holds fewer than ``min_visible_pixels`` pixels.
    """
    pts = scene.points[sp.point_indices]
    rows, cols, z, ok = _project_to_pixels(view, pts)
    if ok.any():
        kr, kc = rows[ok], cols[ok]
        passed = np.abs(z[ok] - depth[kr, kc]) <= config.occlusion_tol
        kr, kc = kr[passed], kc[passed]
    else:
        kr = kc = np.zeros(0, dtype=np.int64)
    if kr.size == 0:
        return NOT_VISIBLE
    r0 = max(int(kr.min()) - 1, 0)
    r1 = min(int(kr.max()) + 1, view.height - 1)
    c0 = max(int(kc.min()) - 1, 0)
    c1 = min(int(kc.max()) + 1, view.width - 1)
    bitmap = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
    rr, cc, valid = _splat_coords(kr, kc, view.height, view.width)
    bitmap[rr[valid] - r0, cc[valid] - c0] = True
    mask = ProjectionMask(view_id=view.view_id, sp_id=sp.sp_id, row0=r0, col0=c0, bitmap=bitmap)
    if mask.pixel_count < config.min_visible_pixels:
        return NOT_VISIBLE
    return mask


def superpoint_distance_2d(mask_a: ProjectionMask, mask_b: ProjectionMask) -> float:
    """Euclidean distance between mask centroids (same view)."""
    if mask_a.view_id != mask_b.view_id:
        raise ValidationError(
            f"masks from different views ({mask_a.view_id} vs {mask_b.view_id})"
        )
    (ra, ca), (rb, cb) = mask_a.centroid_2d, mask_b.centroid_2d
    return float(np.hypot(ra - rb, ca - cb))


class VisibilityIndex:
    """Lookup of (sp_id, view_id) -> ProjectionMask for visible pairs."""

    def __init__(self) -> None:
        self._by_sp: dict[int, dict[int, ProjectionMask]] = {}

    def add(self, mask: ProjectionMask) -> None:
        self._by_sp.setdefault(mask.sp_id, {})[mask.view_id] = mask

    def visible(self, sp_id: int, view_id: int) -> bool:
        return view_id in self._by_sp.get(sp_id, ())

    def mask(self, sp_id: int, view_id: int) -> ProjectionMask:
        return self._by_sp[sp_id][view_id]

    def views_seeing(self, sp_id: int) -> list[int]:
        return sorted(self._by_sp.get(sp_id, ()))

    def covisible_views(self, sp_a: int, sp_b: int) -> list[int]:
        views_a = self._by_sp.get(sp_a)
        views_b = self._by_sp.get(sp_b)
        if not views_a or not views_b:
            return []
        return sorted(views_a.keys() & views_b.keys())

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_sp.values())


def render_all_views(
    scene: SceneGeometry, views: list[CameraView], threads: int = 1
) -> dict[int, RenderResult]:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda v: render_view(scene, v), views))
    else:
        results = [render_view(scene, v) for v in views]
    return {r.view_id: r for r in results}


def build_visibility(
    scene: SceneGeometry,
    superpoints: list[Superpoint],
    views: list[CameraView],
    config: ProjectionConfig = ProjectionConfig(),
    renders: dict[int, RenderResult] | None = None,
    threads: int = 1,
) -> VisibilityIndex:
    """Project every superpoint into every view; keep the visible masks."""
    if renders is None:
        renders = render_all_views(scene, views, threads=threads)

    def per_view(view: CameraView) -> list[ProjectionMask]:
        depth = renders[view.view_id].depth
        out = []
        for sp in superpoints:
            mask = project_superpoint(scene, sp, view, depth, config)
            if mask is not None:
                out.append(mask)
        return out

    index = VisibilityIndex()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for masks in pool.map(per_view, views):
                for m in masks:
                    index.add(m)
    else:
        for view in views:
            for m in per_view(view):
                index.add(m)
    return index
