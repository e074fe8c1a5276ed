"""Writer side of the on-disk interchange formats.

The exporter produces exactly the files the detection pipeline reads:

* ``.zstf`` tensors — little-endian header ``<4sII`` (magic ``ZSTF``,
  version 1, ndim), then one ``<I`` per dimension, a ``<I`` dtype code
  (1 = float32), and the row-major float32 payload.  Each tensor gets a
  ``<name>.json`` sidecar recording patch size and source image dims.
* segment-set JSON — per-segment bounding box (x, y, w, h), pixel area,
  and a run-length encoding of the bbox-local mask: row-major scan,
  alternating zero/one runs, zero run first.
* pair manifests — one JSON document per pair with relative paths to the
  four tensor/segment files plus optional images and ground truth.

This module deliberately has no dependency on the reader package: the
file formats are the contract between the two, and the cross-component
tests confirm every writer here round-trips through the readers.

All writes are atomic (temp file in the target directory, then
``os.replace``) so a crashed export never leaves a torn file behind.
"""

from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from scdexport.errors import IoFailure

MAGIC = b"ZSTF"
VERSION = 1
DTYPE_F32 = 1

_HEADER_FIXED = struct.Struct("<4sII")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write bytes to `path` via a same-directory temp file and rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as e:
        tmp.unlink(missing_ok=True)
        raise IoFailure(f"cannot write {path}: {e}") from e


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_embedding_grid(
    data: np.ndarray,
    patch_size_px: int,
    image_width_px: int,
    image_height_px: int,
    path: str | Path,
) -> None:
    """Write an (H, W, d) float32 grid as a ZSTF tensor plus metadata sidecar."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"embedding grid must be 3-D (H, W, d), got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ValueError(f"grid must be at least 2x2 patches, got {arr.shape[:2]}")
    if not np.isfinite(arr).all():
        raise ValueError("embedding grid contains non-finite values")
    if patch_size_px <= 0:
        raise ValueError(f"patch_size_px must be positive, got {patch_size_px}")
    for count, extent, axis in (
        (arr.shape[0], image_height_px, "height"),
        (arr.shape[1], image_width_px, "width"),
    ):
        if count * patch_size_px != extent:
            raise ValueError(
                f"grid {axis} {count} x patch {patch_size_px} != image {axis} {extent}"
            )
    header = _HEADER_FIXED.pack(MAGIC, VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    dtype = struct.pack("<I", DTYPE_F32)
    atomic_write_bytes(path, header + dims + dtype + arr.astype("<f4", copy=False).tobytes())
    meta = {
        "patch_size_px": patch_size_px,
        "image_height_px": image_height_px,
        "image_width_px": image_width_px,
    }
    atomic_write_text(sidecar_path(path), json.dumps(meta, sort_keys=True) + "\n")


def encode_rle(mask: np.ndarray) -> list[int]:
    """Encode a 2-D boolean mask as alternating runs, zero-run first."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    # Run boundaries sit wherever the value flips; prepend a zero run when
    # the scan opens on a set pixel so decoders can assume the convention.
    edges = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [flat.size]))
    runs = (ends - starts).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tight (x, y, w, h) bounding box of the set pixels; mask must be nonempty."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("cannot take the bbox of an empty mask")
    y, x = int(rows[0]), int(cols[0])
    return x, y, int(cols[-1]) - x + 1, int(rows[-1]) - y + 1


def segment_entry(segment_id: int, mask: np.ndarray) -> dict:
    """Serialize one full-canvas boolean mask as a segment record.

    Area and bbox are recomputed from the mask itself, never copied from
    whatever model produced it.
    """
    x, y, w, h = mask_bbox(mask)
    sub = np.asarray(mask, dtype=bool)[y:y + h, x:x + w]
    return {
        "id": int(segment_id),
        "bbox": [x, y, w, h],
        "area": int(sub.sum()),
        "rle": encode_rle(sub),
    }


def write_segments(image_tag: str, masks: list[np.ndarray], path: str | Path) -> None:
    """Write a segment-set JSON for one epoch; ids follow list order."""
    if image_tag not in ("T0", "T1"):
        raise ValueError(f"image_tag must be 'T0' or 'T1', got {image_tag!r}")
    doc = {
        "image_tag": image_tag,
        "segments": [segment_entry(i, m) for i, m in enumerate(masks)],
    }
    atomic_write_text(path, json.dumps(doc, sort_keys=True) + "\n")


def write_pair_manifest(
    path: str | Path,
    *,
    pair_id: str,
    dataset_tag: str,
    patch_size_px: int,
    image_width_px: int,
    image_height_px: int,
    t0_embeddings: str,
    t0_segments: str,
    t1_embeddings: str,
    t1_segments: str,
    t0_image: str | None = None,
    t1_image: str | None = None,
    ground_truth: str | None = None,
) -> None:
    """Write a pair manifest; all file references are manifest-relative."""
    doc: dict = {
        "pair_id": pair_id,
        "dataset_tag": dataset_tag,
        "patch_size_px": int(patch_size_px),
        "image_width_px": int(image_width_px),
        "image_height_px": int(image_height_px),
        "t0": {"embeddings": t0_embeddings, "segments": t0_segments},
        "t1": {"embeddings": t1_embeddings, "segments": t1_segments},
    }
    if t0_image is not None:
        doc["t0"]["image"] = t0_image
    if t1_image is not None:
        doc["t1"]["image"] = t1_image
    if ground_truth is not None:
        doc["ground_truth"] = ground_truth
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _encode_png(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def write_mask_png(mask: np.ndarray, path: str | Path) -> None:
    """Write a boolean mask as 8-bit grayscale PNG (changed=255)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        raise ValueError("cannot write an empty mask")
    img = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L")
    atomic_write_bytes(path, _encode_png(img))


def write_image_rgb(pixels: np.ndarray, path: str | Path) -> None:
    """Write an (H, W, 3) uint8 array as a PNG."""
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 pixels, got {arr.shape} {arr.dtype}")
    atomic_write_bytes(path, _encode_png(Image.fromarray(arr, mode="RGB")))
