"""Automatic mask generation for the segment-set export.

Two backends produce full-canvas boolean masks:

* ``felzenszwalb`` (default) — classic graph-based segmentation from
  scikit-image.  Needs no weights, partitions every pixel, and maps the
  points-per-side granularity knob onto its scale/min-size parameters:
  more points per side means finer segments.
* ``sam`` — a promptable foundation segmenter in automatic-mask mode,
  used when its optional package and a local checkpoint are available.
  points-per-side is passed straight through as the prompt-grid density.

Whichever backend runs, areas and bounding boxes are recomputed from the
decoded masks downstream — nothing numeric is trusted from the model.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from skimage.segmentation import felzenszwalb

from scdexport.errors import ModelUnavailable

BACKENDS = ("felzenszwalb", "sam")


def felzenszwalb_masks(image: np.ndarray, points_per_side: int) -> list[np.ndarray]:
    """Segment an (H, W, 3) uint8 image into a list of boolean masks.

    The granularity knob steers the merge threshold: scale shrinks as
    points_per_side grows, so a denser grid of notional prompts yields
    smaller, more numerous segments.
    """
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) pixels, got shape {arr.shape}")
    scale = max(1.0, 4096.0 / points_per_side)
    min_size = max(8, (arr.shape[0] * arr.shape[1]) // (points_per_side ** 2 * 8))
    labels = felzenszwalb(arr, scale=scale, sigma=0.8, min_size=min_size)
    return [labels == v for v in np.unique(labels)]


def sam_masks(
    image: np.ndarray, points_per_side: int, checkpoint: str | Path | None
) -> list[np.ndarray]:
    """Run a promptable segmenter in automatic-mask mode (optional backend)."""
    try:
        from segment_anything import (  # type: ignore[import-not-found]
            SamAutomaticMaskGenerator,
            sam_model_registry,
        )
    except ImportError as e:
        raise ModelUnavailable(
            "the 'sam' segmenter needs the segment-anything package "
            "(pip install scdexport[sam]) and a local checkpoint"
        ) from e
    if checkpoint is None or not Path(checkpoint).is_file():
        raise ModelUnavailable(
            f"sam checkpoint not found at {checkpoint}; pass --sam-checkpoint "
            "pointing at a locally downloaded weights file"
        )
    sam = sam_model_registry["vit_h"](checkpoint=str(checkpoint))
    generator = SamAutomaticMaskGenerator(sam, points_per_side=points_per_side)
    return [np.asarray(r["segmentation"], dtype=bool) for r in generator.generate(image)]


def generate_masks(
    image: np.ndarray,
    points_per_side: int,
    backend: str = "felzenszwalb",
    sam_checkpoint: str | Path | None = None,
) -> list[np.ndarray]:
    if backend == "felzenszwalb":
        return felzenszwalb_masks(image, points_per_side)
    if backend == "sam":
        return sam_masks(image, points_per_side, sam_checkpoint)
    raise ValueError(f"unknown segmenter {backend!r}, expected one of {BACKENDS}")


def finalize_masks(
    masks: list[np.ndarray],
    max_mask_frac: float = 1.0,
    min_area: int = 1,
) -> list[np.ndarray]:
    """Filter and order masks for serialization.

    Drops empty masks, masks below `min_area` pixels, and masks covering
    more than `max_mask_frac` of the canvas (useful with partitioning
    backends whose giant background segments would otherwise swamp the
    cross-image verification step).  The survivors are sorted largest
    first with the top-left pixel as a deterministic tiebreak.
    """
    total = None
    kept = []
    for mask in masks:
        mask = np.asarray(mask, dtype=bool)
        if total is None:
            total = mask.size
        area = int(mask.sum())
        if area == 0 or area < min_area:
            continue
        if total and area > max_mask_frac * total:
            continue
        first = int(np.flatnonzero(mask.ravel())[0])
        kept.append((-area, first, mask))
    kept.sort(key=lambda t: t[:2])
    return [mask for _, _, mask in kept]
