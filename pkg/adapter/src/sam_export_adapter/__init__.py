"""Export adapter bridging a 2D promptable segmenter to supercut's store layout.

The supercut pipeline stays offline while building its graph: it reads
pre-computed mask candidates, feature maps and whole-image instance maps
from a store directory.  This package fills such a directory.  It talks to
the pipeline exclusively through files -- the prompt dump it consumes and
the store it writes -- and never imports the pipeline's code, so either
side can be deployed (or swapped out) independently.

Two console entry points do the work:

``export_oracle --prompts prompts.bin --images dir/ --out store/``
    runs the promptable model on every dumped prompt set and writes
    ``masks.bin`` + ``index.json`` plus one feature map per view.

``export_imaps --images dir/ --out store/``
    runs the whole-image model on every view and writes one instance
    map per view.

Both record the model identifier in ``store/metadata.json`` so a store
can always be traced back to the network that produced it.
"""

from .formats import (
    MaskStoreWriter,
    read_prompt_dump,
    rle_encode,
    update_metadata,
    write_feature_map,
    write_instance_map,
)
from .models import ColorPromptSegmenter, ColorRegionLabeler

__all__ = [
    "ColorPromptSegmenter",
    "ColorRegionLabeler",
    "MaskStoreWriter",
    "read_prompt_dump",
    "rle_encode",
    "update_metadata",
    "write_feature_map",
    "write_instance_map",
]

__version__ = "0.1.0"
