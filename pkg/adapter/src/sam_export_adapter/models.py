"""Stand-in segmentation models used for the adapter's self-test.

A real deployment plugs a heavyweight promptable segmenter in here; the
export scripts only care about the two call signatures below.  For
testing the plumbing end to end we ship color-threshold models: on
renders where every object has a unique flat color they behave like a
perfect segmenter, so any disagreement downstream points at the export
code rather than at model quality.

Both models are stateless -- rerunning an export over the same inputs
reproduces the same store byte for byte.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .formats import AdapterError

#: confidence floor so no candidate is written with weight zero
MIN_CONFIDENCE = 0.05

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class ColorPromptSegmenter:
    """Point-prompted segmenter keyed on the color under the first prompt.

    ``segment`` returns the three candidates the store format expects,
    nested so their areas are non-increasing:

    1. every pixel whose color matches the prompted one,
    2. the connected component of that match containing the prompt,
    3. the component's interior after peeling its boundary ring.

    Confidence is the fraction of prompt points each candidate covers,
    floored at :data:`MIN_CONFIDENCE`.
    """

    def __init__(self, tolerance: int = 0):
        if tolerance < 0:
            raise AdapterError(f"tolerance must be >= 0, got {tolerance}")
        self.tolerance = int(tolerance)

    @property
    def identifier(self) -> str:
        return f"color-threshold-t{self.tolerance}"

    def segment(
        self, image: np.ndarray, points: list[tuple[int, int]]
    ) -> list[tuple[np.ndarray, float]]:
        img = np.asarray(image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise AdapterError(f"expected an (h, w, 3) image, got {img.shape}")
        if not points:
            raise AdapterError("prompt set is empty")
        h, w = img.shape[:2]
        for row, col in points:
            if not (0 <= row < h and 0 <= col < w):
                raise AdapterError(f"prompt ({row}, {col}) outside {h}x{w} image")

        row0, col0 = points[0]
        target = img[row0, col0].astype(np.int64)
        dist = np.abs(img.astype(np.int64) - target).max(axis=2)
        matched = dist <= self.tolerance

        component_ids, _ = ndimage.label(matched, structure=_EIGHT_CONNECTED)
        component = component_ids == component_ids[row0, col0]

        depth = ndimage.distance_transform_edt(component)
        core = depth > 1.0
        if not core.any():
            core = component

        out = []
        for mask in (matched, component, core):
            inside = sum(1 for r, c in points if mask[r, c])
            conf = max(MIN_CONFIDENCE, inside / len(points))
            out.append((mask, float(conf)))
        return out


class ColorRegionLabeler:
    """Whole-image model mapping each distinct color to one instance label.

    Pure black is treated as background (label 0).  Labels are assigned
    by sorted packed RGB value, so the numbering is stable across runs
    and across machines.
    """

    identifier = "color-threshold"

    def label_image(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise AdapterError(f"expected an (h, w, 3) image, got {img.shape}")
        packed = (
            img[:, :, 0].astype(np.uint32) << 16
            | img[:, :, 1].astype(np.uint32) << 8
            | img[:, :, 2].astype(np.uint32)
        )
        colors = np.unique(packed)
        colors = colors[colors != 0]  # black stays background
        if colors.size > np.iinfo(np.uint16).max:
            raise AdapterError(f"{colors.size} colors exceed the uint16 label range")
        labels = np.zeros(packed.shape, dtype=np.uint16)
        for rank, color in enumerate(colors, start=1):
            labels[packed == color] = rank
        return labels
