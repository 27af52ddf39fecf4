import numpy as np
import pytest

from supercut.model import CameraView, SceneGeometry
from supercut.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def small_scene():
    """4-object synthetic scene shared by tests that only read it."""
    scene, views = generate(
        SynthConfig(
            num_objects=4,
            camera_count=12,
            points_per_object=1200,
            points_on_walls_floor=5000,
            seed=42,
        )
    )
    return scene, views


@pytest.fixture(scope="session")
def small_pipeline(small_scene):
    """small_scene plus superpoints, renders, and visibility (read-only)."""
    from supercut.presegment import PresegmentConfig, presegment
    from supercut.projection import build_visibility, render_all_views

    scene, views = small_scene
    sps = presegment(scene, PresegmentConfig())
    renders = render_all_views(scene, views)
    vis = build_visibility(scene, sps, views, renders=renders)
    return scene, views, sps, renders, vis


@pytest.fixture()
def plane_scene():
    """Flat 20x20 grid with +z normals; a single trivial segment."""
    xs, ys = np.meshgrid(np.linspace(0, 1, 20), np.linspace(0, 1, 20))
    pts = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(400)])
    normals = np.tile((0.0, 0.0, 1.0), (400, 1))
    return SceneGeometry(points=pts, normals=normals).validate()


@pytest.fixture()
def simple_camera():
    """Identity-pose camera looking down +z."""
    return CameraView(
        view_id=0,
        fx=100.0,
        fy=100.0,
        cx=32.0,
        cy=24.0,
        rotation=np.eye(3),
        translation=np.zeros(3),
        width=64,
        height=48,
    ).validate()
