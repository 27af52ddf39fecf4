"""Write one whole-image instance map per view into a store directory.

Labels are view-local: the pipeline only compares instance ids between
pixels of the same image, so no cross-view identity is attempted here.

Usage::

    export_imaps --images renders/ --out store/
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .formats import AdapterError, update_metadata, write_instance_map
from .images import discover_views, load_rgb
from .models import ColorRegionLabeler


def run_export(images: Path, out: Path, model_id: str, log=print) -> None:
    views = discover_views(images)
    if not views:
        raise AdapterError(f"no view_<id>.png images under {images}")

    model = ColorRegionLabeler()
    out.mkdir(parents=True, exist_ok=True)
    for view_id in sorted(views):
        labels = model.label_image(load_rgb(views[view_id]))
        write_instance_map(out / f"instances_{view_id}.imap", labels)

    update_metadata(out, whole_image_model=model_id)
    log(f"wrote {len(views)} instance maps to {out}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export_imaps",
        description="run the whole-image model over every view render "
        "and write per-view instance maps",
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
    args = parser.parse_args(argv)
    try:
        run_export(args.images, args.out, args.model_id)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
