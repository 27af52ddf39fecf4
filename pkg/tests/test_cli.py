"""Standalone CLI subcommands wired together on a tiny generated scene."""

import pytest

from supercut.cli import main
from supercut.evaluation import load_report
from supercut.formats import load_graph
from supercut.model import load_segmentation, load_superpoints
from supercut.oracle import load_prompts


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_scene")
    rc = main(
        [
            "synth",
            "--objects", "2",
            "--cameras", "6",
            "--seed", "9",
            "--points-per-object", "600",
            "--points-walls-floor", "2500",
            "--images",
            "--out-dir", str(out),
        ]
    )
    assert rc == 0
    return out


def test_synth_writes_scene_store_and_images(synth_dir):
    assert (synth_dir / "scene.ply").is_file()
    assert (synth_dir / "cams.json").is_file()
    assert (synth_dir / "sp.json").is_file()
    assert (synth_dir / "store" / "index.json").is_file()
    assert (synth_dir / "store" / "masks.bin").is_file()
    pngs = sorted((synth_dir / "images").glob("view_*.png"))
    assert len(pngs) == 6


def test_exported_store_validates(synth_dir, capsys):
    rc = main(
        [
            "validate-store",
            "--store", str(synth_dir / "store"),
            "--cameras", str(synth_dir / "cams.json"),
        ]
    )
    assert rc == 0
    assert "store OK" in capsys.readouterr().out


def test_stage_chain(synth_dir, tmp_path, capsys):
    scene = str(synth_dir / "scene.ply")
    cams = str(synth_dir / "cams.json")
    store = str(synth_dir / "store")
    sp = str(tmp_path / "sp.json")
    graph = str(tmp_path / "graph.spg")
    labeled = str(tmp_path / "labeled.spg")
    model = str(tmp_path / "model.gnn")
    refined = str(tmp_path / "refined.spg")
    seg = str(tmp_path / "seg.json")
    report = str(tmp_path / "report.json")

    assert main(["presegment", "--in", scene, "--out", sp]) == 0
    assert len(load_superpoints(sp)) > 2

    assert main(
        [
            "build-graph",
            "--scene", scene,
            "--superpoints", sp,
            "--cameras", cams,
            "--oracle", store,
            "--out", graph,
        ]
    ) == 0
    g = load_graph(graph)
    assert g.edges and all(e.w_sam is not None for e in g.edges)

    assert main(
        [
            "pseudo-label",
            "--graph", graph,
            "--scene", scene,
            "--superpoints", sp,
            "--cameras", cams,
            "--imaps", store,
            "--n-min", "5",
            "--out", labeled,
        ]
    ) == 0
    g = load_graph(labeled)
    assert any(e.pseudo_label is not None for e in g.edges)

    assert main(["train", "--graph", labeled, "--epochs", "25", "--out", model]) == 0
    assert main(["infer", "--graph", labeled, "--model", model, "--out", refined]) == 0
    g = load_graph(refined)
    assert all(e.affinity is not None for e in g.edges)

    assert main(["segment", "--graph", refined, "--superpoints", sp, "--out", seg]) == 0
    assert load_segmentation(seg).instances

    assert main(["eval", "--seg", seg, "--scene", scene, "--out", report]) == 0
    assert "mAP" in capsys.readouterr().out
    assert 0.0 <= load_report(report).map <= 1.0

    # raw-weight cuts work straight off the build-graph output
    seg_raw = str(tmp_path / "seg_raw.json")
    assert main(
        [
            "segment",
            "--graph", graph,
            "--superpoints", sp,
            "--use-weights",
            "--out", seg_raw,
        ]
    ) == 0
    assert load_segmentation(seg_raw).instances


def test_dump_prompts(synth_dir, tmp_path):
    out = str(tmp_path / "prompts.bin")
    rc = main(
        [
            "dump-prompts",
            "--scene", str(synth_dir / "scene.ply"),
            "--superpoints", str(synth_dir / "sp.json"),
            "--cameras", str(synth_dir / "cams.json"),
            "--k", "5",
            "--out", out,
        ]
    )
    assert rc == 0
    prompts = load_prompts(out)
    assert prompts
    for ps in prompts:
        assert 1 <= len(ps.points) <= 5
