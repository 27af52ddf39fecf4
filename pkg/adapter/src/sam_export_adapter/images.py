"""View-image discovery shared by both export scripts."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .formats import AdapterError

_VIEW_NAME = re.compile(r"^view_(\d+)\.png$")


def discover_views(directory: Path) -> dict[int, Path]:
    """Map view ids to image paths for every ``view_<id>.png`` found."""
    directory = Path(directory)
    if not directory.is_dir():
        raise AdapterError(f"image directory {directory} does not exist")
    found: dict[int, Path] = {}
    for path in sorted(directory.iterdir()):
        match = _VIEW_NAME.match(path.name)
        if match:
            found[int(match.group(1))] = path
    return found


def load_rgb(path: Path) -> np.ndarray:
    """Load an image as an ``(h, w, 3)`` uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))
