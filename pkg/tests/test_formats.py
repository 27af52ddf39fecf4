import numpy as np
import pytest

from supercut.formats import (
    PlyParseError,
    SpgFormatError,
    load_graph,
    load_scene,
    mesh_vertex_normals,
    pca_normals,
    save_graph,
    save_scene,
)
from supercut.model import (
    FEATURE_DIM,
    EdgeLabel,
    GraphEdge,
    GraphNode,
    SceneGeometry,
    SuperpointGraph,
    ValidationError,
)


def _demo_scene(n=40, seed=0, with_faces=False):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    colors = rng.uniform(size=(n, 3))
    gt = rng.integers(-3, 5, size=n)
    faces = np.array([[0, 1, 2], [1, 2, 3]]) if with_faces else None
    return SceneGeometry(
        points=pts, normals=normals, colors=colors, gt_instance=gt, faces=faces
    ).validate()


def test_ply_round_trip_bit_exact(tmp_path):
    scene = _demo_scene(with_faces=True)
    path = tmp_path / "scene.ply"
    save_scene(scene, path)
    loaded = load_scene(path)
    np.testing.assert_array_equal(loaded.points, scene.points)
    np.testing.assert_array_equal(loaded.normals, scene.normals)
    np.testing.assert_array_equal(loaded.colors, scene.colors)
    np.testing.assert_array_equal(loaded.gt_instance, scene.gt_instance)
    np.testing.assert_array_equal(loaded.faces, scene.faces)


def test_ply_ascii_parses(tmp_path):
    path = tmp_path / "tri.ply"
    path.write_text(
        "ply\n"
        "format ascii 1.0\n"
        "element vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "element face 1\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
        "0 0 0 255 0 0\n"
        "1 0 0 0 255 0\n"
        "0 1 0 0 0 255\n"
        "3 0 1 2\n"
    )
    scene = load_scene(path)
    assert scene.num_points == 3
    np.testing.assert_allclose(scene.colors[0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(scene.faces, [[0, 1, 2]])
    # normals were absent -> computed from the mesh, unit length
    np.testing.assert_allclose(np.linalg.norm(scene.normals, axis=1), 1.0)


def test_ply_error_reports_byte_offset(tmp_path):
    path = tmp_path / "bad.ply"
    content = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n"
    path.write_bytes(content)  # second vertex row missing
    with pytest.raises(PlyParseError) as exc:
        load_scene(path)
    assert "PLY parse error at byte" in str(exc.value)
    assert exc.value.offset == len(content)


def test_ply_truncated_binary_payload(tmp_path):
    scene = _demo_scene(n=10)
    path = tmp_path / "trunc.ply"
    save_scene(scene, path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(PlyParseError, match="at byte"):
        load_scene(path)


def test_ply_rejects_zero_points(tmp_path):
    path = tmp_path / "empty.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 0\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with pytest.raises(ValidationError, match="zero points"):
        load_scene(path)


def test_ply_bad_magic(tmp_path):
    path = tmp_path / "not.ply"
    path.write_bytes(b"obj\nsomething\n")
    with pytest.raises(PlyParseError):
        load_scene(path)


def test_mesh_vertex_normals_flat_quad():
    pts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=np.float64)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    normals = mesh_vertex_normals(pts, faces)
    np.testing.assert_allclose(normals, np.tile((0, 0, 1.0), (4, 1)), atol=1e-12)


def test_pca_normals_recover_plane():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(size=200), rng.uniform(size=200), np.zeros(200)])
    normals = pca_normals(pts, k=12)
    # plane normal is +-z; orientation is away from the centroid, so just
    # check axis alignment
    np.testing.assert_allclose(np.abs(normals[:, 2]), 1.0, atol=1e-8)
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0)


def test_pca_normals_point_outward_on_sphere():
    rng = np.random.default_rng(2)
    raw = rng.normal(size=(500, 3))
    pts = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    normals = pca_normals(pts, k=10)
    dots = np.einsum("ij,ij->i", normals, pts)
    assert (dots > 0.9).mean() > 0.99


def _demo_graph(features=True, weights=True, affinities=False, labels=False):
    rng = np.random.default_rng(3)
    nodes = [
        GraphNode(i, rng.normal(size=FEATURE_DIM).astype(np.float32) if features else None)
        for i in range(4)
    ]
    edges = []
    for u, v in [(0, 1), (0, 2), (1, 3)]:
        edges.append(
            GraphEdge(
                u,
                v,
                w_sam=float(np.float32(rng.uniform())) if weights else None,
                affinity=float(np.float32(rng.uniform())) if affinities else None,
                pseudo_label=EdgeLabel.POSITIVE if labels and u == 0 else None,
            )
        )
    return SuperpointGraph(nodes=nodes, edges=edges).validate()


@pytest.mark.parametrize(
    "features,weights,affinities,labels",
    [
        (False, False, False, False),
        (True, False, False, False),
        (True, True, False, False),
        (True, True, True, True),
        (False, True, True, False),
    ],
)
def test_spg_round_trip_flag_combinations(tmp_path, features, weights, affinities, labels):
    g = _demo_graph(features, weights, affinities, labels)
    path = tmp_path / "g.spg"
    save_graph(g, path)
    loaded = load_graph(path)
    assert [n.sp_id for n in loaded.nodes] == [n.sp_id for n in g.nodes]
    for a, b in zip(loaded.nodes, g.nodes):
        if features:
            np.testing.assert_array_equal(a.feature, b.feature)
        else:
            assert a.feature is None
    for a, b in zip(loaded.edges, g.edges):
        assert (a.u, a.v) == (b.u, b.v)
        assert a.w_sam == b.w_sam
        assert a.affinity == b.affinity
        assert a.pseudo_label == b.pseudo_label


def test_spg_round_trip_is_byte_stable(tmp_path):
    g = _demo_graph(True, True, True, True)
    p1, p2 = tmp_path / "a.spg", tmp_path / "b.spg"
    save_graph(g, p1)
    save_graph(load_graph(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_spg_rejects_partial_weights(tmp_path):
    g = _demo_graph(weights=True)
    g.edges[1].w_sam = None
    with pytest.raises(ValidationError, match="only"):
        save_graph(g, tmp_path / "g.spg")


def test_spg_bad_magic_mentions_version(tmp_path):
    path = tmp_path / "g.spg"
    save_graph(_demo_graph(), path)
    data = bytearray(path.read_bytes())
    data[:4] = b"SPG9"
    path.write_bytes(bytes(data))
    with pytest.raises(SpgFormatError, match="version mismatch"):
        load_graph(path)


def test_spg_truncation_and_trailing_bytes(tmp_path):
    path = tmp_path / "g.spg"
    save_graph(_demo_graph(), path)
    data = path.read_bytes()
    path.write_bytes(data[:-2])
    with pytest.raises(SpgFormatError):
        load_graph(path)
    path.write_bytes(data + b"xx")
    with pytest.raises(SpgFormatError, match="trailing"):
        load_graph(path)


def test_spg_rejects_bad_label_byte(tmp_path):
    path = tmp_path / "g.spg"
    save_graph(_demo_graph(labels=True, affinities=True), path)
    data = bytearray(path.read_bytes())
    data[-1] = 7  # last edge's label byte
    path.write_bytes(bytes(data))
    with pytest.raises(SpgFormatError, match="label"):
        load_graph(path)
