"""Command-line interface (`supercut <subcommand>`).

Each pipeline stage is exposed standalone, plus `run` (config-driven
end-to-end execution), `synth` (synthetic scene + data generation),
`dump-prompts` (prompt export for external segmenter adapters), and
`validate-store` (format checks on a store directory).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .evaluation import evaluate, save_report
from .formats import load_graph, load_scene, save_graph, save_scene
from .gnn import TrainConfig, apply_affinities, load_params, save_params, train
from .graph_build import (
    AdjacencyConfig,
    AdjacencyMode,
    GraphBuildConfig,
    annotate_graph,
)
from .graph_cut import CutConfig, segment_graph
from .model import (
    load_cameras,
    load_segmentation,
    load_superpoints,
    save_cameras,
    save_segmentation,
    save_superpoints,
)
from .oracle import (
    FeatureStore,
    NoiseConfig,
    OracleStore,
    sample_prompts,
    save_prompts,
    validate_store,
)
from .pipeline import PipelineConfig, parse_exclusions, run_pipeline
from .presegment import PresegmentConfig, presegment
from .projection import ProjectionConfig, build_visibility, render_all_views
from .pseudo_label import InstanceMapStore, annotate_pseudo_labels
from .synth import (
    SynthConfig,
    export_synthetic_store,
    generate,
    render_images,
)


def _add_projection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--occlusion-tol", type=float, default=0.03)
    p.add_argument("--min-visible", type=int, default=50)


def _projection_config(args) -> ProjectionConfig:
    return ProjectionConfig(
        occlusion_tol=args.occlusion_tol, min_visible_pixels=args.min_visible
    )


def _cmd_presegment(args) -> int:
    scene = load_scene(args.infile)
    config = PresegmentConfig(
        k_thresh=args.k_thresh, seg_min_verts=args.min_verts, knn=args.knn
    )
    sps = presegment(scene, config)
    save_superpoints(sps, args.out)
    print(f"wrote {len(sps)} superpoints to {args.out}")
    return 0


def _cmd_build_graph(args) -> int:
    scene = load_scene(args.scene)
    superpoints = load_superpoints(args.superpoints)
    views = load_cameras(args.cameras)
    oracle = OracleStore(args.oracle, views)
    features = FeatureStore(directory=args.features or args.oracle)
    mode = AdjacencyMode.DISTANCE if args.adjacency == "distance" else AdjacencyMode.MESH_SHARED_EDGE
    graph = annotate_graph(
        scene,
        superpoints,
        views,
        oracle,
        features,
        GraphBuildConfig(
            adjacency=AdjacencyConfig(mode=mode, distance_threshold=args.distance_threshold),
            prompt_k=args.prompt_k,
            samples_per_view=args.samples_per_view,
            seed=args.seed,
        ),
        _projection_config(args),
        threads=args.threads,
    )
    save_graph(graph, args.out)
    print(f"wrote graph ({len(graph.nodes)} nodes, {len(graph.edges)} edges) to {args.out}")
    return 0


def _cmd_pseudo_label(args) -> int:
    scene = load_scene(args.scene)
    superpoints = load_superpoints(args.superpoints)
    views = load_cameras(args.cameras)
    graph = load_graph(args.graph)
    visibility = build_visibility(
        scene, superpoints, views, _projection_config(args), threads=args.threads
    )
    store = InstanceMapStore.from_dir(args.imaps, views)
    annotate_pseudo_labels(graph, visibility, store, n_min=args.n_min)
    save_graph(graph, args.out)
    labeled = sum(1 for e in graph.edges if e.pseudo_label is not None)
    print(f"labeled {labeled}/{len(graph.edges)} edges; wrote {args.out}")
    return 0


def _cmd_train(args) -> int:
    graph = load_graph(args.graph)
    result = train(
        graph,
        TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate, seed=args.seed),
    )
    save_params(result.params, args.out)
    print(f"trained {args.epochs} epochs (final loss {result.losses[-1]:.6f}); wrote {args.out}")
    return 0


def _cmd_infer(args) -> int:
    graph = load_graph(args.graph)
    params = load_params(args.model).validate()
    apply_affinities(graph, params)
    save_graph(graph, args.out)
    print(f"wrote affinities for {len(graph.edges)} edges to {args.out}")
    return 0


def _cmd_segment(args) -> int:
    graph = load_graph(args.graph)
    superpoints = load_superpoints(args.superpoints)
    seg = segment_graph(
        superpoints,
        graph,
        CutConfig(
            affinity_threshold=args.tau,
            veto_ratio=args.rho,
            use_affinity=not args.use_weights,
        ),
    )
    save_segmentation(seg, args.out)
    print(f"wrote {len(seg.instances)} instances to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    seg = load_segmentation(args.seg)
    scene = load_scene(args.scene)
    exclusions = parse_exclusions(args.exclude.split(",")) if args.exclude else frozenset()
    report = evaluate(seg, scene, exclusions=exclusions)
    save_report(report, args.out)
    print(f"mAP {report.map:.4f}  AP50 {report.ap50:.4f}  AP25 {report.ap25:.4f}")
    if report.warning:
        print(f"warning: {report.warning}", file=sys.stderr)
    return 0


def _cmd_synth(args) -> int:
    config = SynthConfig(
        num_objects=args.objects,
        camera_count=args.cameras,
        seed=args.seed,
        room_size=args.room_size,
        points_per_object=args.points_per_object,
        points_on_walls_floor=args.points_walls_floor,
        noise=NoiseConfig(p_merge=args.noise_merge, p_split=args.noise_split),
    )
    scene, views = generate(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_scene(scene, out / "scene.ply")
    save_cameras(views, out / "cams.json")
    print(f"wrote scene.ply ({scene.num_points} points) and cams.json ({len(views)} views)")
    if args.images or not args.no_store:
        renders = render_all_views(scene, views, threads=args.threads)
    if args.images:
        render_images(scene, views, renders, out / "images")
        print(f"wrote {len(views)} instance-colored images to {out / 'images'}")
    if not args.no_store:
        superpoints = presegment(
            scene,
            PresegmentConfig(
                k_thresh=args.k_thresh, seg_min_verts=args.min_verts, knn=args.knn
            ),
        )
        save_superpoints(superpoints, out / "sp.json")
        visibility = build_visibility(
            scene, superpoints, views, _projection_config(args), renders=renders
        )
        export_synthetic_store(
            scene,
            views,
            superpoints,
            visibility,
            renders,
            out / "store",
            noise=config.noise,
            seed=args.seed,
            prompt_k=args.prompt_k,
        )
        print(f"wrote synthetic oracle store ({len(visibility)} masks) to {out / 'store'}")
    return 0


def _cmd_run(args) -> int:
    config = PipelineConfig.from_toml(args.config)
    return run_pipeline(config, resume=args.resume, threads=args.threads)


def _cmd_dump_prompts(args) -> int:
    scene = load_scene(args.scene)
    superpoints = load_superpoints(args.superpoints)
    views = load_cameras(args.cameras)
    visibility = build_visibility(
        scene, superpoints, views, _projection_config(args), threads=args.threads
    )
    prompts = []
    for sp in sorted(superpoints, key=lambda s: s.sp_id):
        for view_id in visibility.views_seeing(sp.sp_id):
            prompts.append(sample_prompts(visibility.mask(sp.sp_id, view_id), args.k))
    save_prompts(prompts, args.out)
    print(f"wrote {len(prompts)} prompt sets to {args.out}")
    return 0


def _cmd_validate_store(args) -> int:
    views = load_cameras(args.cameras)
    problems = validate_store(args.store, views)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        print(f"store INVALID ({len(problems)} problems)", file=sys.stderr)
        return 1
    store = OracleStore(args.store, views)
    print(f"store OK ({len(store.index)} mask entries, {len(views)} views)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="supercut",
        description="Superpoint-graph 3D instance segmentation driven by 2D mask oracles.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("presegment", help="over-segment a scene into superpoints")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--k-thresh", type=float, default=0.01)
    p.add_argument("--min-verts", type=int, default=20)
    p.add_argument("--knn", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_presegment)

    p = sub.add_parser("build-graph", help="build the superpoint graph with oracle edge weights")
    p.add_argument("--scene", required=True)
    p.add_argument("--superpoints", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--oracle", required=True, help="oracle store directory")
    p.add_argument("--features", default=None, help="feature map directory (default: oracle dir)")
    p.add_argument("--out", required=True)
    p.add_argument("--adjacency", choices=("distance", "mesh"), default="distance")
    p.add_argument("--distance-threshold", type=float, default=0.10)
    p.add_argument("--prompt-k", type=int, default=5)
    p.add_argument("--samples-per-view", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    _add_projection_flags(p)
    p.set_defaults(fn=_cmd_build_graph)

    p = sub.add_parser("pseudo-label", help="annotate graph edges from instance maps")
    p.add_argument("--graph", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--superpoints", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--imaps", required=True, help="directory with instances_<view>.imap")
    p.add_argument("--n-min", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    _add_projection_flags(p)
    p.set_defaults(fn=_cmd_pseudo_label)

    p = sub.add_parser("train", help="train edge-affinity model on pseudo-labels")
    p.add_argument("--graph", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="write model affinities into graph edges")
    p.add_argument("--graph", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("segment", help="cut the graph into instances")
    p.add_argument("--graph", required=True)
    p.add_argument("--superpoints", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument(
        "--use-weights",
        action="store_true",
        help="cut on raw edge weights instead of model affinities",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_segment)

    p = sub.add_parser("eval", help="score a segmentation against scene ground truth")
    p.add_argument("--seg", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--exclude", default="floor,wall", help="comma-separated ids or names")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scene (+ store, images)")
    p.add_argument("--objects", type=int, default=8)
    p.add_argument("--cameras", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--room-size", type=float, default=4.0)
    p.add_argument("--points-per-object", type=int, default=2200)
    p.add_argument("--points-walls-floor", type=int, default=9000)
    p.add_argument("--noise-merge", type=float, default=0.0)
    p.add_argument("--noise-split", type=float, default=0.0)
    p.add_argument("--images", action="store_true", help="also render per-view instance images")
    p.add_argument("--no-store", action="store_true", help="skip the synthetic oracle store")
    p.add_argument("--k-thresh", type=float, default=0.01)
    p.add_argument("--min-verts", type=int, default=20)
    p.add_argument("--knn", type=int, default=8)
    p.add_argument("--prompt-k", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    _add_projection_flags(p)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("run", help="run the end-to-end pipeline from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("dump-prompts", help="export prompt points for external segmenters")
    p.add_argument("--scene", required=True)
    p.add_argument("--superpoints", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    _add_projection_flags(p)
    p.set_defaults(fn=_cmd_dump_prompts)

    p = sub.add_parser("validate-store", help="check store files against format contracts")
    p.add_argument("--store", required=True)
    p.add_argument("--cameras", required=True)
    p.set_defaults(fn=_cmd_validate_store)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
