"""Fill a store with mask candidates and feature maps from dumped prompts.

The pipeline decides which (view, superpoint) pairs need masks and at
which pixels to prompt; it dumps those decisions to ``prompts.bin``.
This script replays the dump against the promptable model, so the two
sides are guaranteed to agree on the prompt coordinates -- the adapter
never re-samples them.  Feature maps are written for every view image
found, at the model's own grid resolution; the consumer interpolates.

Usage::

    export_oracle --prompts prompts.bin --images renders/ --out store/
"""

from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .formats import (
    FEATURE_CHANNELS,
    AdapterError,
    MaskStoreWriter,
    read_prompt_dump,
    update_metadata,
    write_feature_map,
)
from .images import discover_views, load_rgb
from .models import ColorPromptSegmenter

DEFAULT_GRID_DIV = 8


def build_feature_map(image: np.ndarray, grid_div: int) -> np.ndarray:
    """Pool an image into a coarse ``(h, w, 256)`` feature grid.

    The stand-in encoder averages RGB over blocks and leaves the
    remaining channels zero; a real encoder would fill all of them.
    """
    h, w = image.shape[:2]
    grid_h = max(1, h // grid_div)
    grid_w = max(1, w // grid_div)
    block_h = h // grid_h
    block_w = w // grid_w
    trimmed = image[: grid_h * block_h, : grid_w * block_w].astype(np.float32)
    pooled = trimmed.reshape(grid_h, block_h, grid_w, block_w, 3).mean(axis=(1, 3))
    data = np.zeros((grid_h, grid_w, FEATURE_CHANNELS), dtype=np.float32)
    data[:, :, :3] = pooled / 255.0
    return data


def run_export(
    prompts: Path,
    images: Path,
    out: Path,
    model_id: str,
    tolerance: int,
    grid_div: int,
    log=print,
) -> None:
    records = read_prompt_dump(prompts)
    views = discover_views(images)

    by_view: dict[int, list] = defaultdict(list)
    for view_id, sp_id, points in records:
        by_view[view_id].append((sp_id, points))
    missing = sorted(set(by_view) - set(views))
    if missing:
        raise AdapterError(
            f"prompts reference views with no image: {missing[:8]}"
            + ("..." if len(missing) > 8 else "")
        )

    model = ColorPromptSegmenter(tolerance=tolerance)
    out.mkdir(parents=True, exist_ok=True)
    writer = MaskStoreWriter(out)
    for view_id in sorted(by_view):
        image = load_rgb(views[view_id])
        for sp_id, points in by_view[view_id]:
            writer.add(view_id, sp_id, model.segment(image, points))
    writer.close()

    for view_id in sorted(views):
        fmap = build_feature_map(load_rgb(views[view_id]), grid_div)
        write_feature_map(out / f"features_{view_id}.fmap", fmap)

    update_metadata(
        out,
        promptable_model=model_id,
        color_tolerance=tolerance,
        feature_grid_div=grid_div,
    )
    log(
        f"wrote {len(records)} mask records and {len(views)} feature maps "
        f"to {out}"
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export_oracle",
        description="run the promptable model over a prompt dump and "
        "write mask candidates plus per-view feature maps",
    )
    parser.add_argument(
        "--prompts", type=Path, required=True, metavar="FILE",
        help="prompt dump produced by the pipeline",
    )
    parser.add_argument(
        "--images", type=Path, required=True, metavar="DIR",
        help="directory holding view_<id>.png renders",
    )
    parser.add_argument(
        "--out", type=Path, required=True, metavar="DIR",
        help="store directory to fill (created if needed)",
    )
    parser.add_argument(
        "--model-id", default="color-threshold", metavar="NAME",
        help="model identifier recorded in store metadata "
        "(default: %(default)s)",
    )
    parser.add_argument(
        "--tolerance", type=int, default=0, metavar="N",
        help="max per-channel color distance counted as a match "
        "(default: %(default)s)",
    )
    parser.add_argument(
        "--grid-div", type=int, default=DEFAULT_GRID_DIV, metavar="N",
        help="feature grid downsampling factor (default: %(default)s)",
    )
    args = parser.parse_args(argv)
    try:
        run_export(
            args.prompts,
            args.images,
            args.out,
            args.model_id,
            args.tolerance,
            args.grid_div,
        )
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
