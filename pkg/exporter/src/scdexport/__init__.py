"""Backbone exporter: pretrained encoders + automatic masks to pipeline files.

Runs a patch-token vision transformer and an automatic mask generator
over image pairs and writes the embedding grids, segment sets, and pair
manifests the scene-change detection pipeline consumes.
"""

from scdexport.backbones import (
    PRESETS,
    Backbone,
    download_preset,
    load_backbone,
    make_toy_checkpoint,
)
from scdexport.errors import (
    ExportError,
    ImageDecodeError,
    IoFailure,
    LayoutMismatch,
    ModelUnavailable,
)
from scdexport.export import (
    ExportJob,
    export_dataset,
    export_embeddings,
    export_pair,
    export_segments,
    neighbor_cosine_spread,
)

__all__ = [
    "PRESETS",
    "Backbone",
    "ExportError",
    "ExportJob",
    "ImageDecodeError",
    "IoFailure",
    "LayoutMismatch",
    "ModelUnavailable",
    "download_preset",
    "export_dataset",
    "export_embeddings",
    "export_pair",
    "export_segments",
    "load_backbone",
    "make_toy_checkpoint",
    "neighbor_cosine_spread",
]
