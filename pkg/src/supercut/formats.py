"""Geometry and graph container formats.

Two formats live here:

* PLY geometry (ASCII or binary little-endian).  ``save_scene`` writes
  binary little-endian with double-precision properties so that a
  save/load round trip reproduces every field bit-exactly.  Loading
  accepts common third-party layouts (float32 positions, uchar colors)
  and upcasts.
* ``.spg`` superpoint-graph container: magic ``SPG1``, u32 node count,
  u32 edge count, u8 presence flags, then per-node ``u32 sp_id``
  (+ 256 x f32 feature when present) and per-edge ``u32 u, u32 v``
  (+ f32 w_sam, + f32 affinity, + i8 label with -1/0/1 meaning
  absent/NEGATIVE/POSITIVE).  All little-endian.

Absent normals are computed rather than rejected: area-weighted vertex
normals when faces exist, otherwise PCA normals from the 16 nearest
neighbours (oriented away from the scene centroid).
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np
from scipy.spatial import cKDTree

from .model import (
    EdgeLabel,
    GraphEdge,
    GraphNode,
    SceneGeometry,
    SuperpointGraph,
    ValidationError,
)

PLY_TYPES = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}

SPG_MAGIC = b"SPG1"

FLAG_FEATURES = 1
FLAG_WEIGHTS = 2
FLAG_AFFINITIES = 4
FLAG_LABELS = 8


class PlyParseError(ValueError):
    """Malformed PLY input; carries the byte offset of the problem."""

    def __init__(self, offset: int, message: str) -> None:
        self.offset = offset
        super().__init__(f"PLY parse error at byte {offset}: {message}")


class SpgFormatError(ValueError):
    """Malformed or version-mismatched .spg container."""


# ---------------------------------------------------------------------------
# PLY


class _PlyProperty:
    __slots__ = ("name", "dtype", "is_list", "count_dtype")

    def __init__(self, name: str, dtype: str, is_list: bool, count_dtype: str | None):
        self.name = name
        self.dtype = dtype
        self.is_list = is_list
        self.count_dtype = count_dtype


class _PlyElement:
    __slots__ = ("name", "count", "properties")

    def __init__(self, name: str, count: int):
        self.name = name
        self.count = count
        self.properties: list[_PlyProperty] = []

    @property
    def has_list(self) -> bool:
        return any(p.is_list for p in self.properties)


def _parse_ply_header(buf: bytes) -> tuple[list[_PlyElement], str, int]:
    """Returns (elements, format, payload offset)."""
    if not buf.startswith(b"ply"):
        raise PlyParseError(0, "missing 'ply' magic")
    end = buf.find(b"end_header")
    if end < 0:
        raise PlyParseError(len(buf), "missing 'end_header'")
    nl = buf.find(b"\n", end)
    if nl < 0:
        raise PlyParseError(len(buf), "no newline after 'end_header'")
    payload_start = nl + 1

    elements: list[_PlyElement] = []
    fmt = ""
    offset = 0
    for raw_line in buf[:end].split(b"\n"):
        line = raw_line.decode("ascii", errors="replace").strip()
        line_offset = offset
        offset += len(raw_line) + 1
        if not line or line == "ply" or line.startswith("comment") or line.startswith("obj_info"):
            continue
        tokens = line.split()
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] not in (
                "ascii",
                "binary_little_endian",
                "binary_big_endian",
            ):
                raise PlyParseError(line_offset, f"unknown format line: {line!r}")
            if tokens[1] == "binary_big_endian":
                raise PlyParseError(line_offset, "big-endian PLY is not supported")
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise PlyParseError(line_offset, f"bad element line: {line!r}")
            try:
                count = int(tokens[2])
            except ValueError:
                raise PlyParseError(line_offset, f"bad element count: {tokens[2]!r}") from None
            elements.append(_PlyElement(tokens[1], count))
        elif tokens[0] == "property":
            if not elements:
                raise PlyParseError(line_offset, "property before any element")
            if tokens[1] == "list":
                if len(tokens) != 5:
                    raise PlyParseError(line_offset, f"bad list property: {line!r}")
                count_t, item_t, name = tokens[2], tokens[3], tokens[4]
                if count_t not in PLY_TYPES or item_t not in PLY_TYPES:
                    raise PlyParseError(line_offset, f"unknown property type in: {line!r}")
                elements[-1].properties.append(
                    _PlyProperty(name, PLY_TYPES[item_t], True, PLY_TYPES[count_t])
                )
            else:
                if len(tokens) != 3:
                    raise PlyParseError(line_offset, f"bad property line: {line!r}")
                if tokens[1] not in PLY_TYPES:
                    raise PlyParseError(line_offset, f"unknown property type {tokens[1]!r}")
                elements[-1].properties.append(
                    _PlyProperty(tokens[2], PLY_TYPES[tokens[1]], False, None)
                )
        else:
            raise PlyParseError(line_offset, f"unknown header keyword {tokens[0]!r}")
    if not fmt:
        raise PlyParseError(0, "header has no format line")
    return elements, fmt, payload_start


def _read_binary_element(
    buf: bytes, offset: int, elem: _PlyElement
) -> tuple[dict[str, np.ndarray | list], int]:
    """Read one element's records; returns (column dict, new offset)."""
    if not elem.has_list:
        dtype = np.dtype([(p.name, "<" + p.dtype) for p in elem.properties])
        need = dtype.itemsize * elem.count
        if offset + need > len(buf):
            raise PlyParseError(
                len(buf),
                f"truncated payload for element {elem.name!r} "
                f"(need {need} bytes from offset {offset})",
            )
        rows = np.frombuffer(buf, dtype=dtype, count=elem.count, offset=offset)
        return {p.name: rows[p.name] for p in elem.properties}, offset + need

    columns: dict[str, list] = {p.name: [] for p in elem.properties}
    for _ in range(elem.count):
        for p in elem.properties:
            if p.is_list:
                cdt = np.dtype("<" + p.count_dtype)
                if offset + cdt.itemsize > len(buf):
                    raise PlyParseError(len(buf), f"truncated list count in {elem.name!r}")
                n = int(np.frombuffer(buf, dtype=cdt, count=1, offset=offset)[0])
                offset += cdt.itemsize
                idt = np.dtype("<" + p.dtype)
                if offset + idt.itemsize * n > len(buf):
                    raise PlyParseError(len(buf), f"truncated list items in {elem.name!r}")
                columns[p.name].append(np.frombuffer(buf, dtype=idt, count=n, offset=offset))
                offset += idt.itemsize * n
            else:
                dt = np.dtype("<" + p.dtype)
                if offset + dt.itemsize > len(buf):
                    raise PlyParseError(len(buf), f"truncated scalar in {elem.name!r}")
                columns[p.name].append(np.frombuffer(buf, dtype=dt, count=1, offset=offset)[0])
                offset += dt.itemsize
    return columns, offset


def _read_ascii_element(
    buf: bytes, offset: int, elem: _PlyElement
) -> tuple[dict[str, list], int]:
    columns: dict[str, list] = {p.name: [] for p in elem.properties}
    for _ in range(elem.count):
        nl = buf.find(b"\n", offset)
        if nl < 0:
            nl = len(buf)
        line = buf[offset:nl]
        tokens = line.split()
        if not tokens:
            raise PlyParseError(offset, f"empty record line in element {elem.name!r}")
        pos = 0
        for p in elem.properties:
            try:
                if p.is_list:
                    n = int(tokens[pos])
                    vals = [float(t) for t in tokens[pos + 1 : pos + 1 + n]]
                    if len(vals) != n:
                        raise IndexError
                    columns[p.name].append(np.asarray(vals))
                    pos += 1 + n
                else:
                    columns[p.name].append(float(tokens[pos]))
                    pos += 1
            except (ValueError, IndexError):
                raise PlyParseError(
                    offset, f"bad record for element {elem.name!r}: {line!r}"
                ) from None
        offset = nl + 1
    # restore the declared dtypes (uchar colors must stay uint8 so callers
    # can tell 0-255 data from 0-1 floats)
    for p in elem.properties:
        dt = np.dtype(p.dtype)
        if p.is_list:
            columns[p.name] = [np.asarray(v, dtype=dt) for v in columns[p.name]]
        else:
            columns[p.name] = np.asarray(columns[p.name], dtype=dt)
    return columns, offset


def mesh_vertex_normals(points: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals (cross products summed, then normalized)."""
    v0 = points[faces[:, 0]]
    cross = np.cross(points[faces[:, 1]] - v0, points[faces[:, 2]] - v0)
    normals = np.zeros_like(points)
    for k in range(3):
        np.add.at(normals, faces[:, k], cross)
    norms = np.linalg.norm(normals, axis=1)
    degenerate = norms < 1e-12
    normals[degenerate] = (0.0, 0.0, 1.0)
    norms[degenerate] = 1.0
    return normals / norms[:, None]


def pca_normals(points: np.ndarray, k: int = 16) -> np.ndarray:
    """Normals from k-NN PCA, oriented away from the scene centroid."""
    n = points.shape[0]
    k_eff = min(k, n - 1)
    if k_eff < 2:
        return np.tile((0.0, 0.0, 1.0), (n, 1))
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k_eff + 1)
    nbrs = points[idx]  # (n, k+1, 3), column 0 is the point itself
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]  # eigenvector of the smallest eigenvalue
    outward = points - points.mean(axis=0)
    flip = np.einsum("ni,ni->n", normals, outward) < 0
    normals[flip] *= -1.0
    zero = np.abs(np.einsum("ni,ni->n", normals, outward)) < 1e-12
    if np.any(zero):
        # orientation undefined; make the first nonzero component positive
        sel = normals[zero]
        lead = sel[np.arange(sel.shape[0]), np.argmax(np.abs(sel) > 1e-12, axis=1)]
        sel[lead < 0] *= -1.0
        normals[zero] = sel
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def load_scene(path: str | Path) -> SceneGeometry:
    """Load a PLY scene; computes normals when the file lacks them."""
    buf = Path(path).read_bytes()
    elements, fmt, offset = _parse_ply_header(buf)

    data: dict[str, dict] = {}
    for elem in elements:
        if fmt == "ascii":
            columns, offset = _read_ascii_element(buf, offset, elem)
        else:
            columns, offset = _read_binary_element(buf, offset, elem)
        data[elem.name] = columns
    if fmt != "ascii" and offset != len(buf):
        raise PlyParseError(offset, f"{len(buf) - offset} trailing bytes after last element")

    if "vertex" not in data:
        raise PlyParseError(0, "no vertex element")
    vert = data["vertex"]
    for axis in ("x", "y", "z"):
        if axis not in vert:
            raise PlyParseError(0, f"vertex element lacks property {axis!r}")
    points = np.column_stack(
        [np.asarray(vert["x"], dtype=np.float64), np.asarray(vert["y"], dtype=np.float64), np.asarray(vert["z"], dtype=np.float64)]
    )
    if points.shape[0] == 0:
        raise ValidationError("scene has zero points")

    faces = None
    if "face" in data:
        face_cols = data["face"]
        list_name = next(iter(face_cols))
        rows = face_cols[list_name]
        if len(rows):
            lens = {len(r) for r in rows}
            if lens != {3}:
                raise PlyParseError(0, f"non-triangle faces present (sizes {sorted(lens)})")
            faces = np.asarray(np.stack(rows), dtype=np.int64)
        else:
            faces = np.zeros((0, 3), dtype=np.int64)

    if all(k in vert for k in ("nx", "ny", "nz")):
        normals = np.column_stack(
            [np.asarray(vert["nx"], dtype=np.float64), np.asarray(vert["ny"], dtype=np.float64), np.asarray(vert["nz"], dtype=np.float64)]
        )
    elif faces is not None and len(faces):
        normals = mesh_vertex_normals(points, faces)
    else:
        normals = pca_normals(points)

    colors = None
    if all(k in vert for k in ("red", "green", "blue")):
        cols = [vert["red"], vert["green"], vert["blue"]]
        arrs = [np.asarray(c) for c in cols]
        if any(a.dtype == np.uint8 for a in arrs):
            colors = np.column_stack([a.astype(np.float64) / 255.0 for a in arrs])
        else:
            colors = np.column_stack([a.astype(np.float64) for a in arrs])

    gt_instance = None
    if "instance" in vert:
        gt_instance = np.asarray(vert["instance"], dtype=np.int64)

    return SceneGeometry(
        points=points, normals=normals, colors=colors, faces=faces, gt_instance=gt_instance
    ).validate()


def save_scene(scene: SceneGeometry, path: str | Path) -> None:
    """Write binary little-endian PLY with double-precision properties.

    Doubles everywhere (including colors) keep save/load round trips
    bit-exact; the int32 ``instance`` property carries GT labels.
    """
    scene.validate()
    n = scene.num_points
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    fields: list[tuple[str, str]] = [("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                                     ("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
    header += [f"property double {p}" for p in ("x", "y", "z", "nx", "ny", "nz")]
    if scene.colors is not None:
        header += [f"property double {p}" for p in ("red", "green", "blue")]
        fields += [("red", "<f8"), ("green", "<f8"), ("blue", "<f8")]
    if scene.gt_instance is not None:
        header.append("property int instance")
        fields.append(("instance", "<i4"))
    if scene.faces is not None:
        header.append(f"element face {scene.faces.shape[0]}")
        header.append("property list uchar int vertex_indices")
    header.append("end_header")

    rows = np.zeros(n, dtype=np.dtype(fields))
    rows["x"], rows["y"], rows["z"] = scene.points.T
    rows["nx"], rows["ny"], rows["nz"] = scene.normals.T
    if scene.colors is not None:
        rows["red"], rows["green"], rows["blue"] = scene.colors.T
    if scene.gt_instance is not None:
        if scene.gt_instance.min() < np.iinfo(np.int32).min or scene.gt_instance.max() > np.iinfo(np.int32).max:
            raise ValidationError("gt_instance ids exceed int32 range")
        rows["instance"] = scene.gt_instance.astype(np.int32)

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rows.tobytes())
        if scene.faces is not None and scene.faces.shape[0]:
            m = scene.faces.shape[0]
            face_rows = np.zeros(m, dtype=np.dtype([("n", "u1"), ("a", "<i4"), ("b", "<i4"), ("c", "<i4")]))
            face_rows["n"] = 3
            face_rows["a"], face_rows["b"], face_rows["c"] = scene.faces.T.astype(np.int32)
            f.write(face_rows.tobytes())


# ---------------------------------------------------------------------------
# .spg graph container


def _graph_flags(graph: SuperpointGraph) -> int:
    flags = 0
    feat = [n.feature is not None for n in graph.nodes]
    if any(feat):
        if not all(feat):
            raise ValidationError("cannot serialize: features present on some nodes only")
        flags |= FLAG_FEATURES
    wsam = [e.w_sam is not None for e in graph.edges]
    if any(wsam):
        if not all(wsam):
            raise ValidationError("cannot serialize: w_sam present on some edges only")
        flags |= FLAG_WEIGHTS
    aff = [e.affinity is not None for e in graph.edges]
    if any(aff):
        if not all(aff):
            raise ValidationError("cannot serialize: affinity present on some edges only")
        flags |= FLAG_AFFINITIES
    if any(e.pseudo_label is not None for e in graph.edges):
        flags |= FLAG_LABELS
    return flags


def save_graph(graph: SuperpointGraph, path: str | Path) -> None:
    graph.validate()
    flags = _graph_flags(graph)
    out = bytearray()
    out += SPG_MAGIC
    out += struct.pack("<IIB", graph.num_nodes, graph.num_edges, flags)
    for node in graph.nodes:
        if node.sp_id < 0:
            raise ValidationError(f"sp_id {node.sp_id} not serializable as u32")
        out += struct.pack("<I", node.sp_id)
        if flags & FLAG_FEATURES:
            out += np.ascontiguousarray(node.feature, dtype="<f4").tobytes()
    for e in graph.edges:
        out += struct.pack("<II", e.u, e.v)
        if flags & FLAG_WEIGHTS:
            out += struct.pack("<f", e.w_sam)
        if flags & FLAG_AFFINITIES:
            out += struct.pack("<f", e.affinity)
        if flags & FLAG_LABELS:
            label = -1 if e.pseudo_label is None else int(e.pseudo_label)
            out += struct.pack("<b", label)
    Path(path).write_bytes(bytes(out))


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise SpgFormatError(
                f"truncated file: needed {n} bytes for {what} at offset {self.pos}, "
                f"only {len(self.buf) - self.pos} remain"
            )
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def load_graph(path: str | Path) -> SuperpointGraph:
    from .model import FEATURE_DIM

    buf = Path(path).read_bytes()
    cur = _Cursor(buf)
    magic = cur.take(4, "magic")
    if magic != SPG_MAGIC:
        raise SpgFormatError(f"bad magic {magic!r}: expected {SPG_MAGIC!r} (version mismatch?)")
    num_nodes, num_edges, flags = cur.unpack("<IIB", "header")

    nodes: list[GraphNode] = []
    feat_bytes = FEATURE_DIM * 4
    for _ in range(num_nodes):
        (sp_id,) = cur.unpack("<I", "node sp_id")
        feature = None
        if flags & FLAG_FEATURES:
            feature = np.frombuffer(cur.take(feat_bytes, "node feature"), dtype="<f4").copy()
        nodes.append(GraphNode(sp_id=int(sp_id), feature=feature))

    edges: list[GraphEdge] = []
    for _ in range(num_edges):
        u, v = cur.unpack("<II", "edge endpoints")
        w_sam = affinity = None
        label = None
        if flags & FLAG_WEIGHTS:
            (w_sam,) = cur.unpack("<f", "edge w_sam")
            w_sam = float(w_sam)
        if flags & FLAG_AFFINITIES:
            (affinity,) = cur.unpack("<f", "edge affinity")
            affinity = float(affinity)
        if flags & FLAG_LABELS:
            (raw,) = cur.unpack("<b", "edge label")
            if raw not in (-1, 0, 1):
                raise SpgFormatError(f"invalid edge label byte {raw}")
            label = None if raw == -1 else EdgeLabel(raw)
        edges.append(GraphEdge(u=int(u), v=int(v), w_sam=w_sam, affinity=affinity, pseudo_label=label))

    if cur.pos != len(buf):
        raise SpgFormatError(f"{len(buf) - cur.pos} trailing bytes after last edge")
    return SuperpointGraph(nodes=nodes, edges=edges).validate()
