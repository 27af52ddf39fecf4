"""Promptable mask oracles: prompt sampling, multi-scale selection, and
the two backends (file-backed store of exported model outputs; synthetic
ground-truth oracle with optional corruption noise).

File formats owned here:

* Oracle store: a directory holding ``index.json`` (mapping
  ``"<view_id>,<sp_id>"`` to a byte offset) and ``masks.bin``.  Each
  record is three candidates, each ``u32 rle_len, rle_len x u32 runs,
  f32 confidence``.  Runs encode the row-major bitmap with alternating
  run lengths starting with zeros (COCO uncompressed-counts semantics).
  Mask dimensions are not stored; they come from the cameras file.
* Feature maps ``features_<view_id>.fmap``: magic ``FMP1``, u32 H_f,
  u32 W_f, u32 C, then f32 data row-major.
* Prompt dumps ``prompts.bin``: magic ``PRM1``, u32 record count, then
  per record ``u32 view_id, u32 sp_id, u32 k, k x (u32 row, u32 col)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .model import CameraView, SceneGeometry, ValidationError
from .projection import ProjectionMask, RenderResult
from .rng import TAG_ORACLE, derive_rng

FMAP_MAGIC = b"FMP1"
PROMPTS_MAGIC = b"PRM1"

MAX_PROMPTS = 16
SELECT_MARGIN = 0.05

LABEL_8CONN = np.ones((3, 3), dtype=int)


class MissingOracleDataError(KeyError):
    def __init__(self, view_id: int, sp_id: int, context: str = "") -> None:
        self.view_id = view_id
        self.sp_id = sp_id
        msg = f"MISSING_ORACLE_DATA: no oracle entry for view_id={view_id}, sp_id={sp_id}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)

    def __str__(self) -> str:
        return self.args[0]


class OracleFormatError(ValueError):
    """Corrupted oracle store / feature map / prompt dump."""


# ---------------------------------------------------------------------------
# Bitmaps and RLE


@dataclass
class MaskBitmap:
    """Binary mask stored as a cropped bitmap plus full image dimensions."""

    height: int
    width: int
    row0: int
    col0: int
    bitmap: np.ndarray  # 2D bool crop

    def __post_init__(self) -> None:
        self.bitmap = np.ascontiguousarray(self.bitmap, dtype=bool)

    @classmethod
    def from_full(cls, full: np.ndarray) -> "MaskBitmap":
        full = np.asarray(full, dtype=bool)
        rs, cs = np.nonzero(full)
        if rs.size == 0:
            return cls(full.shape[0], full.shape[1], 0, 0, np.zeros((0, 0), dtype=bool))
        r0, r1 = int(rs.min()), int(rs.max())
        c0, c1 = int(cs.min()), int(cs.max())
        return cls(full.shape[0], full.shape[1], r0, c0, full[r0 : r1 + 1, c0 : c1 + 1])

    @property
    def area(self) -> int:
        return int(self.bitmap.sum())

    def to_full(self) -> np.ndarray:
        full = np.zeros((self.height, self.width), dtype=bool)
        if self.bitmap.size:
            h, w = self.bitmap.shape
            full[self.row0 : self.row0 + h, self.col0 : self.col0 + w] = self.bitmap
        return full

    def intersection_area(self, other: "MaskBitmap") -> int:
        if self.bitmap.size == 0 or other.bitmap.size == 0:
            return 0
        r0 = max(self.row0, other.row0)
        c0 = max(self.col0, other.col0)
        r1 = min(self.row0 + self.bitmap.shape[0], other.row0 + other.bitmap.shape[0])
        c1 = min(self.col0 + self.bitmap.shape[1], other.col0 + other.bitmap.shape[1])
        if r0 >= r1 or c0 >= c1:
            return 0
        a = self.bitmap[r0 - self.row0 : r1 - self.row0, c0 - self.col0 : c1 - self.col0]
        b = other.bitmap[r0 - other.row0 : r1 - other.row0, c0 - other.col0 : c1 - other.col0]
        return int(np.logical_and(a, b).sum())


def encode_rle(mask: np.ndarray) -> np.ndarray:
    """Row-major RLE with alternating run lengths starting with zeros (u32)."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return np.zeros(0, dtype=np.uint32)
    change = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate([[0], runs])
    return runs.astype(np.uint32)


def decode_rle(runs: np.ndarray, height: int, width: int) -> np.ndarray:
    runs = np.asarray(runs, dtype=np.int64)
    total = int(runs.sum())
    if total != height * width:
        raise OracleFormatError(
            f"RLE runs sum to {total}, expected {height}x{width}={height * width}"
        )
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    return np.repeat(values, runs).reshape(height, width)


# ---------------------------------------------------------------------------
# Prompts


@dataclass
class PromptSet:
    view_id: int
    sp_id: int
    points: list[tuple[int, int]]  # (row, col) pixel coordinates

    def validate(self) -> "PromptSet":
        if not (1 <= len(self.points) <= MAX_PROMPTS):
            raise ValidationError(
                f"prompt set for view {self.view_id}, sp {self.sp_id} has "
                f"{len(self.points)} points; need 1..{MAX_PROMPTS}"
            )
        return self


def mask_edt(mask: ProjectionMask) -> np.ndarray:
    """Distance of every mask pixel to the mask boundary.

    Pixels beyond the image border count as background, so a mask hugging
    the border still has small distances there.  Computed on the cropped
    bitmap with a one-pixel zero pad, which is exactly equivalent to the
    full-image transform because everything outside the crop is non-mask.
    """
    padded = np.pad(mask.bitmap, 1, mode="constant", constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def suppression_radius(area: int) -> float:
    return max(3.0, float(np.sqrt(area)) / 4.0)


def sample_prompts(mask: ProjectionMask, k: int = 5) -> PromptSet:
    """Iterative farthest-from-boundary prompt sampling.

    Repeats up to k times: take the distance-transform argmax (ties by
    (row, col) order), record it, zero a disk of the suppression radius
    around it.  Stops early when the map is exhausted.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if mask.pixel_count == 0:
        raise ValidationError(f"empty mask for view {mask.view_id}, sp {mask.sp_id}")
    edt = mask_edt(mask)
    radius = suppression_radius(mask.pixel_count)
    h, w = edt.shape
    rows_grid, cols_grid = np.indices(edt.shape)
    points: list[tuple[int, int]] = []
    for _ in range(min(k, MAX_PROMPTS)):
        flat = int(np.argmax(edt))
        r, c = divmod(flat, w)
        if edt[r, c] <= 0.0:
            break
        points.append((r + mask.row0, c + mask.col0))
        disk = (rows_grid - r) ** 2 + (cols_grid - c) ** 2 <= radius * radius
        edt[disk] = 0.0
    return PromptSet(view_id=mask.view_id, sp_id=mask.sp_id, points=points).validate()


def save_prompts(prompts: list[PromptSet], path: str | Path) -> None:
    out = bytearray()
    out += PROMPTS_MAGIC
    out += struct.pack("<I", len(prompts))
    for p in prompts:
        p.validate()
        out += struct.pack("<III", p.view_id, p.sp_id, len(p.points))
        for r, c in p.points:
            out += struct.pack("<II", r, c)
    Path(path).write_bytes(bytes(out))


def load_prompts(path: str | Path) -> list[PromptSet]:
    buf = Path(path).read_bytes()
    if buf[:4] != PROMPTS_MAGIC:
        raise OracleFormatError(f"bad prompt dump magic {buf[:4]!r}")
    pos = 4
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    prompts = []
    for _ in range(count):
        if pos + 12 > len(buf):
            raise OracleFormatError("truncated prompt dump")
        view_id, sp_id, k = struct.unpack_from("<III", buf, pos)
        pos += 12
        if pos + 8 * k > len(buf):
            raise OracleFormatError("truncated prompt dump record")
        pts = [struct.unpack_from("<II", buf, pos + 8 * i) for i in range(k)]
        pos += 8 * k
        prompts.append(
            PromptSet(int(view_id), int(sp_id), [(int(r), int(c)) for r, c in pts]).validate()
        )
    if pos != len(buf):
        raise OracleFormatError(f"{len(buf) - pos} trailing bytes in prompt dump")
    return prompts


# ---------------------------------------------------------------------------
# Candidates and selection


@dataclass
class MaskCandidate:
    mask: MaskBitmap
    confidence: float

    @property
    def area(self) -> int:
        return self.mask.area

    def validate(self) -> "MaskCandidate":
        if self.area <= 0:
            raise ValidationError("mask candidate is empty")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")
        return self


@dataclass
class OracleResponse:
    """Exactly three candidates ordered by descending area (whole, medium, small)."""

    candidates: list[MaskCandidate]

    def validate(self) -> "OracleResponse":
        if len(self.candidates) != 3:
            raise ValidationError(f"response must hold 3 candidates, got {len(self.candidates)}")
        for c in self.candidates:
            c.validate()
        areas = [c.area for c in self.candidates]
        if not (areas[0] >= areas[1] >= areas[2]):
            raise ValidationError(f"candidate areas {areas} not descending")
        return self


def select_mask(resp: OracleResponse) -> MaskCandidate:
    """Prefer the largest scale unless its confidence trails by > 0.05."""
    large, medium, small = resp.candidates
    if large.confidence >= max(medium.confidence, small.confidence) - SELECT_MARGIN:
        return large
    if medium.confidence >= small.confidence - SELECT_MARGIN:
        return medium
    return small


# ---------------------------------------------------------------------------
# Oracle store (file-backed)


def _store_key(view_id: int, sp_id: int) -> str:
    return f"{view_id},{sp_id}"


def _encode_record(resp: OracleResponse) -> bytes:
    out = bytearray()
    for cand in resp.candidates:
        runs = encode_rle(cand.mask.to_full())
        out += struct.pack("<I", len(runs))
        out += runs.astype("<u4").tobytes()
        out += struct.pack("<f", cand.confidence)
    return bytes(out)


def _decode_record(buf: bytes, offset: int, height: int, width: int, key: str) -> OracleResponse:
    candidates = []
    pos = offset
    for scale in range(3):
        if pos + 4 > len(buf):
            raise OracleFormatError(f"oracle entry {key}: truncated at candidate {scale}")
        (rle_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        end = pos + 4 * rle_len
        if end + 4 > len(buf):
            raise OracleFormatError(f"oracle entry {key}: truncated RLE at candidate {scale}")
        runs = np.frombuffer(buf, dtype="<u4", count=rle_len, offset=pos)
        pos = end
        (conf,) = struct.unpack_from("<f", buf, pos)
        pos += 4
        try:
            full = decode_rle(runs, height, width)
        except OracleFormatError as exc:
            raise OracleFormatError(f"oracle entry {key}: {exc}") from None
        candidates.append(MaskCandidate(mask=MaskBitmap.from_full(full), confidence=float(conf)))
    try:
        return OracleResponse(candidates).validate()
    except ValidationError as exc:
        raise OracleFormatError(f"oracle entry {key}: {exc}") from None


class OracleStoreWriter:
    """Streams responses into ``masks.bin`` and writes ``index.json`` on close."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._index: dict[str, int] = {}
        self._chunks: list[bytes] = []
        self._offset = 0

    def add(self, view_id: int, sp_id: int, resp: OracleResponse) -> None:
        key = _store_key(view_id, sp_id)
        if key in self._index:
            raise ValidationError(f"duplicate oracle entry {key}")
        self._index[key] = self._offset
        chunk = _encode_record(resp.validate())
        self._chunks.append(chunk)
        self._offset += len(chunk)

    def close(self) -> None:
        (self.directory / "masks.bin").write_bytes(b"".join(self._chunks))
        with open(self.directory / "index.json", "w", encoding="utf-8") as f:
            json.dump(self._index, f, indent=0, sort_keys=True)

    def __enter__(self) -> "OracleStoreWriter":
        return self

    def __exit__(self, *exc) -> None:
        if exc[0] is None:
            self.close()


class OracleStore:
    """Read side of the oracle store; dimensions come from the cameras."""

    def __init__(self, directory: str | Path, views: list[CameraView]) -> None:
        self.directory = Path(directory)
        index_path = self.directory / "index.json"
        if not index_path.is_file():
            raise OracleFormatError(f"no index.json in oracle store {self.directory}")
        with open(index_path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        self.index: dict[tuple[int, int], int] = {}
        for key, off in raw.items():
            try:
                view_s, sp_s = key.split(",")
                self.index[(int(view_s), int(sp_s))] = int(off)
            except ValueError:
                raise OracleFormatError(f"bad index key {key!r}") from None
        self.blob = (self.directory / "masks.bin").read_bytes() if (self.directory / "masks.bin").is_file() else b""
        self.dims = {v.view_id: (v.height, v.width) for v in views}

    def query(self, view_id: int, sp_id: int) -> OracleResponse:
        if (view_id, sp_id) not in self.index:
            raise MissingOracleDataError(view_id, sp_id)
        if view_id not in self.dims:
            raise OracleFormatError(f"oracle entry {_store_key(view_id, sp_id)}: unknown view")
        height, width = self.dims[view_id]
        return _decode_record(
            self.blob, self.index[(view_id, sp_id)], height, width, _store_key(view_id, sp_id)
        )

    def query_prompt(self, view_id: int, prompt: PromptSet) -> OracleResponse:
        return self.query(view_id, prompt.sp_id)


def query_file_oracle(store: OracleStore, view_id: int, prompt: PromptSet) -> OracleResponse:
    """Verbatim lookup of the exported response for (view_id, prompt.sp_id)."""
    return store.query(view_id, prompt.sp_id)


# ---------------------------------------------------------------------------
# Synthetic oracle


@dataclass(frozen=True)
class NoiseConfig:
    p_merge: float = 0.0
    p_split: float = 0.0

    def validate(self) -> "NoiseConfig":
        for name, p in (("p_merge", self.p_merge), ("p_split", self.p_split)):
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"{name}={p} outside [0, 1]")
        return self

    @property
    def enabled(self) -> bool:
        return self.p_merge > 0.0 or self.p_split > 0.0


def _erode_quantile(full: np.ndarray, edt: np.ndarray, q: float) -> np.ndarray:
    """Pixels of ``full`` strictly deeper than the q-quantile boundary distance."""
    vals = edt[full]
    thresh = float(np.quantile(vals, q))
    eroded = full & (edt > thresh)
    if not eroded.any():
        flat = int(np.argmax(np.where(full, edt, -1.0)))
        eroded = np.zeros_like(full)
        eroded[np.unravel_index(flat, full.shape)] = True
    return eroded


def _component_near(mask: np.ndarray, point: tuple[int, int]) -> np.ndarray:
    """Connected component of ``mask`` at/ nearest to ``point`` (8-connectivity)."""
    labels, count = ndimage.label(mask, structure=LABEL_8CONN)
    if count <= 1:
        return mask.copy()
    r, c = point
    if 0 <= r < mask.shape[0] and 0 <= c < mask.shape[1] and labels[r, c] > 0:
        return labels == labels[r, c]
    rs, cs = np.nonzero(mask)
    d2 = (rs - r) ** 2 + (cs - c) ** 2
    order = np.lexsort((cs, rs, d2))
    best = order[0]
    return labels == labels[rs[best], cs[best]]


def _three_scales(full: np.ndarray, first_prompt: tuple[int, int]) -> list[MaskBitmap]:
    """Whole / eroded-to-75% / deep-core blob around the first prompt."""
    padded = np.pad(full, 1, mode="constant", constant_values=False)
    edt = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    medium = _erode_quantile(full, edt, 0.25)
    core = full & (edt > float(np.quantile(edt[full], 0.5)))
    if core.any():
        small = _component_near(core, first_prompt)
    else:
        small = _erode_quantile(full, edt, 1.0)  # falls back to the single deepest pixel
    return [MaskBitmap.from_full(m) for m in (full, medium, small)]


class SyntheticOracle:
    """Ground-truth-backed oracle with optional merge/split corruption.

    The whole-scale mask is the rendered pixel set of the GT instance
    under the majority of prompt points.  With probability ``p_merge``
    the whole mask is unioned with a nearby instance's rendering; with
    probability ``p_split`` it is replaced by one side of a random line
    through its centroid.  Medium and small scales are rebuilt from the
    (possibly corrupted) whole mask, so corruption propagates to every
    scale a caller might select.  Clean responses carry confidences
    drawn from U(0.8, 1.0) sorted descending (the whole mask always
    wins selection); corrupted ones draw i.i.d. U(0.3, 0.6); prompts on
    floor/wall/unannotated pixels get the surrounding background
    component with confidences in (0.1, 0.3).  Responses are
    deterministic given (seed, view_id, sp_id).
    """

    def __init__(
        self,
        scene: SceneGeometry,
        views: list[CameraView],
        renders: dict[int, RenderResult],
        noise: NoiseConfig = NoiseConfig(),
        seed: int = 0,
    ) -> None:
        if scene.gt_instance is None:
            raise ValidationError("synthetic oracle requires gt_instance")
        if scene.is_mesh:
            raise ValidationError("synthetic oracle supports point-cloud scenes only")
        self.noise = noise.validate()
        self.seed = seed
        self.id_maps: dict[int, np.ndarray] = {}
        for view in views:
            render = renders[view.view_id]
            pidx = render.point_index
            ids = np.full(pidx.shape, -1, dtype=np.int64)
            hit = pidx >= 0
            ids[hit] = scene.gt_instance[pidx[hit]]
            self.id_maps[view.view_id] = ids
        self._cache: dict[tuple[int, int], OracleResponse] = {}

    def _majority_id(self, id_map: np.ndarray, prompt: PromptSet) -> int:
        vals = np.array([id_map[r, c] for r, c in prompt.points], dtype=np.int64)
        uniq, counts = np.unique(vals, return_counts=True)
        return int(uniq[np.argmax(counts)])  # ties: smallest id (uniq is sorted)

    def query(self, view_id: int, prompt: PromptSet) -> OracleResponse:
        key = (view_id, prompt.sp_id)
        if key in self._cache:
            return self._cache[key]
        if view_id not in self.id_maps:
            raise MissingOracleDataError(view_id, prompt.sp_id)
        id_map = self.id_maps[view_id]
        rng = derive_rng(self.seed, TAG_ORACLE, view_id, prompt.sp_id)
        majority = self._majority_id(id_map, prompt)
        first = prompt.points[0]

        if majority < 0:
            # background prompt: the surrounding same-label region
            region = _component_near(id_map == majority, first)
            confs = np.sort(rng.uniform(0.1, 0.3, size=3))[::-1]
            whole = region
        else:
            base = id_map == majority
            whole = base
            corrupted = False
            if self.noise.p_merge > 0 and rng.uniform() < self.noise.p_merge:
                partner = self._merge_partner(id_map, base, majority, rng)
                if partner is not None:
                    whole = whole | (id_map == partner)
                    corrupted = True
            if self.noise.p_split > 0 and rng.uniform() < self.noise.p_split:
                half = self._random_half(whole, rng)
                if half is not None:
                    whole = half
                    corrupted = True
            if corrupted:
                confs = rng.uniform(0.3, 0.6, size=3)
            else:
                confs = np.sort(rng.uniform(0.8, 1.0, size=3))[::-1]

        scales = _three_scales(whole, first)
        resp = OracleResponse(
            [MaskCandidate(mask=m, confidence=float(c)) for m, c in zip(scales, confs)]
        ).validate()
        self._cache[key] = resp
        return resp

    # same calling convention as OracleStore
    query_prompt = query

    @staticmethod
    def _merge_partner(
        id_map: np.ndarray, base: np.ndarray, majority: int, rng: np.random.Generator
    ) -> int | None:
        """Another object instance in this view, preferring spatially close ones."""
        others = [int(i) for i in np.unique(id_map) if i >= 0 and i != majority]
        if not others:
            return None
        dist_to_base = ndimage.distance_transform_edt(~base)
        gaps = np.array([float(dist_to_base[id_map == o].min()) for o in others])
        adjacent = [o for o, g in zip(others, gaps) if g <= 5.0]
        if adjacent:
            return int(rng.choice(np.asarray(adjacent)))
        return others[int(np.argmin(gaps))]

    @staticmethod
    def _random_half(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray | None:
        rs, cs = np.nonzero(mask)
        cr, cc = rs.mean(), cs.mean()
        theta = rng.uniform(0.0, 2.0 * np.pi)
        proj = (rs - cr) * np.cos(theta) + (cs - cc) * np.sin(theta)
        for keep in (proj > 0, proj <= 0):
            if keep.any() and not keep.all():
                half = np.zeros_like(mask)
                half[rs[keep], cs[keep]] = True
                return half
        return None


# ---------------------------------------------------------------------------
# Feature maps


@dataclass
class FeatureMap:
    view_id: int
    data: np.ndarray  # (H_f, W_f, C) float32

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)

    def validate(self) -> "FeatureMap":
        if self.data.ndim != 3:
            raise ValidationError(f"feature map must be 3D, got {self.data.shape}")
        from .model import FEATURE_DIM

        if self.data.shape[2] != FEATURE_DIM:
            raise ValidationError(
                f"feature map has {self.data.shape[2]} channels, expected {FEATURE_DIM}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("feature map contains non-finite values")
        return self


def fmap_path(directory: str | Path, view_id: int) -> Path:
    return Path(directory) / f"features_{view_id}.fmap"


def save_fmap(fm: FeatureMap, path: str | Path) -> None:
    fm.validate()
    h, w, c = fm.data.shape
    with open(path, "wb") as f:
        f.write(FMAP_MAGIC)
        f.write(struct.pack("<III", h, w, c))
        f.write(fm.data.astype("<f4").tobytes())


def load_fmap(path: str | Path, view_id: int) -> FeatureMap:
    buf = Path(path).read_bytes()
    if buf[:4] != FMAP_MAGIC:
        raise OracleFormatError(f"{path}: bad feature map magic {buf[:4]!r}")
    if len(buf) < 16:
        raise OracleFormatError(f"{path}: truncated feature map header")
    h, w, c = struct.unpack_from("<III", buf, 4)
    need = 16 + 4 * h * w * c
    if len(buf) != need:
        raise OracleFormatError(f"{path}: expected {need} bytes, found {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", count=h * w * c, offset=16).reshape(h, w, c)
    return FeatureMap(view_id=view_id, data=data.copy()).validate()


def interpolate_features(
    fm: FeatureMap, pixels: np.ndarray, image_dims: tuple[int, int]
) -> np.ndarray:
    """Bilinear lookup of image pixels in the (possibly coarser) feature grid.

    Pixel (row, col) maps to grid coordinates ((row + 0.5) / H * H_f - 0.5,
    likewise for col), clamped to the grid edges.  ``pixels`` is (m, 2)
    in (row, col) order; returns (m, C) float64.
    """
    height, width = image_dims
    hf, wf = fm.data.shape[:2]
    pix = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    gr = np.clip((pix[:, 0] + 0.5) / height * hf - 0.5, 0.0, hf - 1.0)
    gc = np.clip((pix[:, 1] + 0.5) / width * wf - 0.5, 0.0, wf - 1.0)
    r0 = np.floor(gr).astype(np.int64)
    c0 = np.floor(gc).astype(np.int64)
    r1 = np.minimum(r0 + 1, hf - 1)
    c1 = np.minimum(c0 + 1, wf - 1)
    fr = (gr - r0)[:, None]
    fc = (gc - c0)[:, None]
    data = fm.data.astype(np.float64)
    top = data[r0, c0] * (1.0 - fc) + data[r0, c1] * fc
    bottom = data[r1, c0] * (1.0 - fc) + data[r1, c1] * fc
    return top * (1.0 - fr) + bottom * fr


def interpolate_feature(
    fm: FeatureMap, pixel: tuple[float, float], image_dims: tuple[int, int]
) -> np.ndarray:
    return interpolate_features(fm, np.asarray([pixel]), image_dims)[0]


class FeatureStore:
    """Lazy per-view feature map access, from a directory or preloaded maps."""

    def __init__(
        self,
        directory: str | Path | None = None,
        preloaded: dict[int, FeatureMap] | None = None,
    ) -> None:
        self.directory = Path(directory) if directory is not None else None
        self._maps: dict[int, FeatureMap] = dict(preloaded or {})

    def get(self, view_id: int, sp_id: int | None = None) -> FeatureMap:
        if view_id in self._maps:
            return self._maps[view_id]
        if self.directory is not None:
            path = fmap_path(self.directory, view_id)
            if path.is_file():
                fm = load_fmap(path, view_id)
                self._maps[view_id] = fm
                return fm
        raise MissingOracleDataError(view_id, -1 if sp_id is None else sp_id)


def validate_store(directory: str | Path, views: list[CameraView]) -> list[str]:
    """Check a store directory end to end; returns a list of problems.

    An empty list means every mask entry decodes (with descending candidate
    areas and confidences in range), every referenced view has a camera, and
    every camera view has a loadable feature map and a dimension-matching
    instance map.
    """
    from .pseudo_label import imap_path, load_imap

    directory = Path(directory)
    problems: list[str] = []
    known = {v.view_id: v for v in views}
    try:
        store = OracleStore(directory, views)
    except (OSError, OracleFormatError, ValidationError) as exc:
        return [f"oracle index: {exc}"]
    for view_id, sp_id in sorted(store.index):
        if view_id not in known:
            problems.append(
                f"oracle entry {_store_key(view_id, sp_id)}: no camera with view_id={view_id}"
            )
            continue
        try:
            store.query(view_id, sp_id)
        except (OracleFormatError, ValidationError) as exc:
            problems.append(str(exc))
    for view_id, view in sorted(known.items()):
        fpath = fmap_path(directory, view_id)
        if not fpath.is_file():
            problems.append(f"missing feature map {fpath.name}")
        else:
            try:
                load_fmap(fpath, view_id)
            except (OracleFormatError, ValidationError) as exc:
                problems.append(str(exc))
        ipath = imap_path(directory, view_id)
        if not ipath.is_file():
            problems.append(f"missing instance map {ipath.name}")
            continue
        try:
            labels = load_imap(ipath)
        except (OracleFormatError, ValidationError) as exc:
            problems.append(str(exc))
            continue
        if labels.shape != (view.height, view.width):
            problems.append(
                f"{ipath.name}: shape {labels.shape} does not match camera "
                f"({view.height}, {view.width})"
            )
    return problems
