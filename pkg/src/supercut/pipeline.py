"""End-to-end orchestration: seven fixed stages driven by one TOML config.

presegment -> build-graph -> pseudo-label -> train -> infer -> segment -> eval

Each stage writes its artifacts into ``out_dir``; ``resume=True`` skips
leading stages whose outputs already exist and load cleanly, and reruns
everything downstream of the first stage that actually executes.  A
``manifest.json`` records the config hash, seed, and per-stage wall time
(statuses: ran / skipped / failed).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .evaluation import DEFAULT_EXCLUSIONS, evaluate, load_report, save_report
from .formats import load_graph, load_scene, save_graph
from .gnn import TrainConfig, apply_affinities, load_params, save_params, train
from .graph_build import (
    AdjacencyConfig,
    AdjacencyMode,
    GraphBuildConfig,
    annotate_graph,
)
from .graph_cut import CutConfig, segment_graph
from .model import (
    FLOOR_ID,
    WALL_ID,
    ValidationError,
    load_cameras,
    load_segmentation,
    load_superpoints,
    save_segmentation,
    save_superpoints,
)
from .oracle import FeatureStore, NoiseConfig, OracleStore, SyntheticOracle
from .presegment import PresegmentConfig, presegment
from .projection import ProjectionConfig, build_visibility, render_all_views
from .pseudo_label import InstanceMapStore, annotate_pseudo_labels
from .synth import make_feature_maps, make_instance_maps

STAGES = (
    "presegment",
    "build-graph",
    "pseudo-label",
    "train",
    "infer",
    "segment",
    "eval",
)

_EXCLUDE_NAMES = {"floor": FLOOR_ID, "wall": WALL_ID}


def parse_exclusions(tokens: list[str]) -> frozenset[int]:
    ids = set()
    for token in tokens:
        token = str(token).strip().lower()
        if token in _EXCLUDE_NAMES:
            ids.add(_EXCLUDE_NAMES[token])
        else:
            try:
                ids.add(int(token))
            except ValueError:
                raise ValidationError(f"unknown exclusion {token!r}") from None
    return frozenset(ids)


@dataclass(frozen=True)
class PipelineConfig:
    scene: str
    cameras: str
    out_dir: str
    store: str | None = None  # directory with oracle masks + .fmap + .imap
    oracle: str = "store"  # "store" or "synthetic"
    seed: int = 0
    noise_merge: float = 0.0  # synthetic oracle / instance-map noise
    noise_split: float = 0.0
    stages: tuple[str, ...] = STAGES
    presegment: PresegmentConfig = field(default_factory=PresegmentConfig)
    adjacency_mode: str = "distance"
    distance_threshold: float = 0.10
    prompt_k: int = 5
    samples_per_view: int = 5
    occlusion_tol: float = 0.03
    min_visible_pixels: int = 50
    n_min: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    cut: CutConfig = field(default_factory=CutConfig)
    exclude: tuple[str, ...] = ("floor", "wall")

    def validate(self) -> "PipelineConfig":
        if self.oracle not in ("store", "synthetic"):
            raise ValidationError(f"oracle must be 'store' or 'synthetic', got {self.oracle!r}")
        if self.oracle == "store" and self.store is None:
            raise ValidationError("oracle='store' requires a store directory")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ValidationError(f"unknown stages {unknown}; valid: {list(STAGES)}")
        order = [STAGES.index(s) for s in self.stages]
        if sorted(order) != order or len(set(order)) != len(order):
            raise ValidationError("stages must follow pipeline order without repeats")
        self.presegment.validate()
        self.cut.validate()
        NoiseConfig(self.noise_merge, self.noise_split).validate()
        parse_exclusions(list(self.exclude))
        if self.adjacency_mode not in ("distance", "mesh"):
            raise ValidationError(f"unknown adjacency mode {self.adjacency_mode!r}")
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["stages"] = list(self.stages)
        data["exclude"] = list(self.exclude)
        return data

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        paths = raw.get("paths", {})
        pipe = raw.get("pipeline", {})
        pre = raw.get("presegment", {})
        graph = raw.get("graph", {})
        plab = raw.get("pseudo_label", {})
        tr = raw.get("train", {})
        seg = raw.get("segment", {})
        ev = raw.get("eval", {})
        seed = int(pipe.get("seed", 0))
        return cls(
            scene=str(paths["scene"]),
            cameras=str(paths["cameras"]),
            out_dir=str(paths["out_dir"]),
            store=str(paths["store"]) if "store" in paths else None,
            oracle=str(pipe.get("oracle", "store")),
            seed=seed,
            noise_merge=float(pipe.get("noise_merge", 0.0)),
            noise_split=float(pipe.get("noise_split", 0.0)),
            stages=tuple(pipe.get("stages", STAGES)),
            presegment=PresegmentConfig(
                k_thresh=float(pre.get("k_thresh", 0.01)),
                seg_min_verts=int(pre.get("seg_min_verts", 20)),
                knn=int(pre.get("knn", 8)),
            ),
            adjacency_mode=str(graph.get("adjacency", "distance")),
            distance_threshold=float(graph.get("distance_threshold", 0.10)),
            prompt_k=int(graph.get("prompt_k", 5)),
            samples_per_view=int(graph.get("samples_per_view", 5)),
            occlusion_tol=float(graph.get("occlusion_tol", 0.03)),
            min_visible_pixels=int(graph.get("min_visible_pixels", 50)),
            n_min=int(plab.get("n_min", 10)),
            train=TrainConfig(
                epochs=int(tr.get("epochs", 200)),
                learning_rate=float(tr.get("learning_rate", 1e-3)),
                seed=int(tr.get("seed", seed)),
                zero_edge_weight=bool(tr.get("zero_edge_weight", False)),
            ),
            cut=CutConfig(
                affinity_threshold=float(seg.get("tau", 0.5)),
                veto_ratio=float(seg.get("rho", 0.25)),
                use_affinity=bool(seg.get("use_affinity", True)),
            ),
            exclude=tuple(str(t) for t in ev.get("exclude", ["floor", "wall"])),
        ).validate()

    @classmethod
    def from_toml(cls, path: str | Path) -> "PipelineConfig":
        with open(path, "rb") as f:
            raw = tomllib.load(f)
        return cls.from_dict(raw)


@dataclass
class StageRecord:
    name: str
    status: str  # "ran" | "skipped" | "failed"
    seconds: float


class _RunContext:
    """Lazily computed shared state (renders/visibility are not artifacts)."""

    def __init__(self, config: PipelineConfig, threads: int) -> None:
        self.config = config
        self.threads = threads
        self.out = Path(config.out_dir)
        self.scene = load_scene(config.scene)
        self.views = load_cameras(config.cameras)
        self.noise = NoiseConfig(config.noise_merge, config.noise_split)
        self._renders = None
        self._visibility = None
        self._superpoints = None

    # artifact paths -------------------------------------------------
    @property
    def sp_path(self) -> Path:
        return self.out / "sp.json"

    @property
    def graph_path(self) -> Path:
        return self.out / "graph.spg"

    @property
    def labeled_path(self) -> Path:
        return self.out / "graph_labeled.spg"

    @property
    def model_path(self) -> Path:
        return self.out / "model.gnn"

    @property
    def refined_path(self) -> Path:
        return self.out / "graph_refined.spg"

    @property
    def seg_path(self) -> Path:
        return self.out / "seg.json"

    @property
    def report_path(self) -> Path:
        return self.out / "report.json"

    # lazy shared state ----------------------------------------------
    @property
    def superpoints(self):
        if self._superpoints is None:
            self._superpoints = load_superpoints(self.sp_path)
        return self._superpoints

    @property
    def renders(self):
        if self._renders is None:
            self._renders = render_all_views(
                self.scene, self.views, threads=self.threads
            )
        return self._renders

    @property
    def visibility(self):
        if self._visibility is None:
            self._visibility = build_visibility(
                self.scene,
                self.superpoints,
                self.views,
                ProjectionConfig(
                    occlusion_tol=self.config.occlusion_tol,
                    min_visible_pixels=self.config.min_visible_pixels,
                ),
                renders=self.renders,
            )
        return self._visibility

    def oracle_backend(self):
        if self.config.oracle == "synthetic":
            oracle = SyntheticOracle(
                self.scene, self.views, self.renders, noise=self.noise, seed=self.config.seed
            )
            features = FeatureStore(
                preloaded=make_feature_maps(self.scene, self.views, self.renders)
            )
            return oracle, features
        store_dir = Path(self.config.store)
        oracle = OracleStore(store_dir, self.views)
        return oracle, FeatureStore(directory=store_dir)

    def instance_maps(self) -> InstanceMapStore:
        if self.config.oracle == "synthetic":
            return make_instance_maps(
                self.scene, self.views, self.renders, noise=self.noise, seed=self.config.seed
            )
        return InstanceMapStore.from_dir(Path(self.config.store), self.views)


# ---------------------------------------------------------------------------
# Stage implementations: run_X executes and writes, valid_X probes outputs.


def _run_presegment(ctx: _RunContext) -> None:
    sps = presegment(ctx.scene, ctx.config.presegment)
    save_superpoints(sps, ctx.sp_path)
    ctx._superpoints = sps
    ctx._visibility = None


def _run_build_graph(ctx: _RunContext) -> None:
    oracle, features = ctx.oracle_backend()
    mode = (
        AdjacencyMode.DISTANCE
        if ctx.config.adjacency_mode == "distance"
        else AdjacencyMode.MESH_SHARED_EDGE
    )
    graph = annotate_graph(
        ctx.scene,
        ctx.superpoints,
        ctx.views,
        oracle,
        features,
        GraphBuildConfig(
            adjacency=AdjacencyConfig(mode=mode, distance_threshold=ctx.config.distance_threshold),
            prompt_k=ctx.config.prompt_k,
            samples_per_view=ctx.config.samples_per_view,
            seed=ctx.config.seed,
        ),
        ProjectionConfig(
            occlusion_tol=ctx.config.occlusion_tol,
            min_visible_pixels=ctx.config.min_visible_pixels,
        ),
        visibility=ctx.visibility,
        renders=ctx.renders,
        threads=ctx.threads,
    )
    save_graph(graph, ctx.graph_path)


def _run_pseudo_label(ctx: _RunContext) -> None:
    graph = load_graph(ctx.graph_path)
    annotate_pseudo_labels(graph, ctx.visibility, ctx.instance_maps(), n_min=ctx.config.n_min)
    save_graph(graph, ctx.labeled_path)


def _run_train(ctx: _RunContext) -> None:
    graph = load_graph(ctx.labeled_path)
    result = train(graph, ctx.config.train)
    save_params(result.params, ctx.model_path)


def _run_infer(ctx: _RunContext) -> None:
    graph = load_graph(ctx.labeled_path)
    params = load_params(ctx.model_path).validate()
    apply_affinities(graph, params, zero_edge_weight=ctx.config.train.zero_edge_weight)
    save_graph(graph, ctx.refined_path)


def _segment_input(ctx: _RunContext) -> Path:
    # Affinity cuts need the refined graph; raw w_sam cuts work off build-graph
    # output, so affinity-off configs can skip the GNN stages entirely.
    if ctx.config.cut.use_affinity:
        return ctx.refined_path
    if ctx.refined_path.is_file():
        return ctx.refined_path
    return ctx.graph_path


def _run_segment(ctx: _RunContext) -> None:
    graph = load_graph(_segment_input(ctx))
    seg = segment_graph(
        ctx.superpoints, graph, ctx.config.cut, num_points=ctx.scene.num_points
    )
    save_segmentation(seg, ctx.seg_path)


def _run_eval(ctx: _RunContext) -> None:
    seg = load_segmentation(ctx.seg_path)
    report = evaluate(seg, ctx.scene, exclusions=parse_exclusions(list(ctx.config.exclude)))
    save_report(report, ctx.report_path)


def _probe(loader, *paths) -> bool:
    try:
        for path in paths:
            if not Path(path).is_file():
                return False
        loader()
        return True
    except Exception:
        return False


def _stage_valid(ctx: _RunContext, stage: str) -> bool:
    if stage == "presegment":
        return _probe(lambda: load_superpoints(ctx.sp_path), ctx.sp_path)
    if stage == "build-graph":
        return _probe(lambda: load_graph(ctx.graph_path), ctx.graph_path)
    if stage == "pseudo-label":
        return _probe(lambda: load_graph(ctx.labeled_path), ctx.labeled_path)
    if stage == "train":
        return _probe(lambda: load_params(ctx.model_path).validate(), ctx.model_path)
    if stage == "infer":
        return _probe(lambda: load_graph(ctx.refined_path), ctx.refined_path)
    if stage == "segment":
        return _probe(lambda: load_segmentation(ctx.seg_path), ctx.seg_path)
    if stage == "eval":
        return _probe(lambda: load_report(ctx.report_path), ctx.report_path)
    raise ValidationError(f"unknown stage {stage!r}")


_STAGE_FNS = {
    "presegment": _run_presegment,
    "build-graph": _run_build_graph,
    "pseudo-label": _run_pseudo_label,
    "train": _run_train,
    "infer": _run_infer,
    "segment": _run_segment,
    "eval": _run_eval,
}


def run_pipeline(
    config: PipelineConfig,
    resume: bool = False,
    threads: int | None = None,
    log=print,
) -> int:
    """Execute the configured stages; returns 0 on success, 1 on stage failure.

    The manifest is written even when a stage fails (its record carries
    status "failed" and the exception text is re-raised to the caller via
    the log; artifacts written before the failure are retained).
    """
    import os

    config.validate()
    if threads is None:
        threads = os.cpu_count() or 1
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = _RunContext(config, threads)
    records: list[StageRecord] = []
    upstream_ran = False
    status = 0
    for stage in config.stages:
        if resume and not upstream_ran and _stage_valid(ctx, stage):
            log(f"[{stage}] skipped (valid output present)")
            records.append(StageRecord(stage, "skipped", 0.0))
            continue
        start = time.perf_counter()
        try:
            _STAGE_FNS[stage](ctx)
        except Exception as exc:
            records.append(StageRecord(stage, "failed", time.perf_counter() - start))
            log(f"[{stage}] FAILED: {exc}")
            status = 1
            break
        elapsed = time.perf_counter() - start
        records.append(StageRecord(stage, "ran", elapsed))
        log(f"[{stage}] done in {elapsed:.2f}s")
        upstream_ran = True
    manifest = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "stages": [asdict(r) for r in records],
        "failed_stage": next((r.name for r in records if r.status == "failed"), None),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return status
