"""Bit-exact interchange formats: embedding grids, segments, masks, manifests.

Everything the pipeline consumes or emits crosses through this module, so the
detection stages never touch a deep-learning runtime.

On-disk formats
---------------
Tensor container (".zstf"):
    magic     4 bytes  b"ZSTF"
    version   u32 LE   (currently 1)
    ndim      u32 LE
    dims      ndim x u32 LE
    dtype     u32 LE   (1 = float32)
    payload   row-major little-endian values

Embedding grids are rank-3 tensors (H, W, d). Grid geometry that the header
cannot carry (patch size in pixels, source image dims) lives in a JSON
sidecar at "<file>.json" with keys patch_size_px / image_width_px /
image_height_px; `write_tensor` emits it and `read_tensor` consumes it.

Segment sets are JSON: {"image_tag": "T0"|"T1", "segments": [{"id", "bbox":
[x, y, w, h], "area", "rle": [...]}]}. RLE runs scan the segment bbox in
row-major order and alternate zero-run / one-run starting with the zero-run
(which may be 0).

Binary masks are 8-bit grayscale PNG, changed = 255, unchanged = 0.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BadMagic,
    DimMismatch,
    FormatError,
    IoFailure,
    NonFiniteValue,
    RunLengthOverflow,
    TruncatedPayload,
    UnsupportedDtype,
    UnsupportedVersion,
)

MAGIC = b"ZSTF"
VERSION = 1
DTYPE_F32 = 1

_HEADER_FIXED = struct.Struct("<4sII")  # magic, version, ndim


@dataclass(frozen=True)
class PatchEmbeddingGrid:
    """H x W grid of d-dimensional patch descriptors for one image.

    `data` is float32 with shape (height, width, dim), C-contiguous. The grid
    must cover the source image: height*patch_size_px may overhang the image
    by less than one patch, never undershoot by more.
    """

    height: int
    width: int
    dim: int
    data: np.ndarray
    patch_size_px: int
    image_height_px: int
    image_width_px: int

    def __post_init__(self):
        d = self.data
        if d.dtype != np.float32:
            raise FormatError(f"grid data must be float32, got {d.dtype}")
        if d.shape != (self.height, self.width, self.dim):
            raise FormatError(
                f"grid data shape {d.shape} != ({self.height}, {self.width}, {self.dim})"
            )
        if self.height < 2 or self.width < 2:
            raise FormatError(
                f"grid must be at least 2x2 patches, got {self.height}x{self.width}"
            )
        if not np.isfinite(d).all():
            idx = int(np.flatnonzero(~np.isfinite(d.ravel()))[0])
            raise NonFiniteValue(f"non-finite value at flat index {idx}", offset=idx)
        if self.patch_size_px <= 0:
            raise FormatError(f"patch_size_px must be positive, got {self.patch_size_px}")
        for axis, count, extent in (
            ("height", self.height, self.image_height_px),
            ("width", self.width, self.image_width_px),
        ):
            span = count * self.patch_size_px
            if span >= extent + self.patch_size_px:
                raise FormatError(
                    f"grid {axis} {count} x patch {self.patch_size_px} overhangs "
                    f"image {axis} {extent} by a full patch or more"
                )
            if span < extent:
                raise FormatError(
                    f"grid {axis} {count} x patch {self.patch_size_px} covers only "
                    f"{span} px of the {extent} px image {axis}"
                )
        if not d.flags.c_contiguous:
            object.__setattr__(self, "data", np.ascontiguousarray(d))
        self.data.setflags(write=False)

    @property
    def n_patches(self) -> int:
        return self.height * self.width

    def descriptor(self, index: int) -> np.ndarray:
        """Descriptor for a flat (row-major) patch index."""
        r, c = divmod(index, self.width)
        return self.data[r, c]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PatchEmbeddingGrid):
            return NotImplemented
        return (
            (self.height, self.width, self.dim, self.patch_size_px,
             self.image_height_px, self.image_width_px)
            == (other.height, other.width, other.dim, other.patch_size_px,
                other.image_height_px, other.image_width_px)
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True)
class Segment:
    """One binary segment mask, RLE-encoded over its bounding box.

    bbox is (x, y, w, h) in pixels; `rle` scans the bbox row-major and
    alternates zero/one runs starting with the zero run.
    """

    id: int
    bbox: tuple[int, int, int, int]
    rle: tuple[int, ...]
    area: int

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))
        object.__setattr__(self, "rle", tuple(int(v) for v in self.rle))
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise FormatError(f"segment {self.id}: bbox {self.bbox} has empty extent")
        if x < 0 or y < 0:
            raise FormatError(f"segment {self.id}: bbox {self.bbox} has negative origin")
        mask = decode_rle(self)
        true_count = int(mask.sum())
        if true_count != self.area:
            raise FormatError(
                f"segment {self.id}: decoded mask has {true_count} pixels, area says {self.area}"
            )

    def full_mask(self, image_size: tuple[int, int]) -> np.ndarray:
        """Place the bbox mask on a full image canvas of (width, height)."""
        w_img, h_img = image_size
        x, y, w, h = self.bbox
        if x + w > w_img or y + h > h_img:
            raise FormatError(
                f"segment {self.id}: bbox {self.bbox} exceeds image {w_img}x{h_img}"
            )
        out = np.zeros((h_img, w_img), dtype=bool)
        out[y:y + h, x:x + w] = decode_rle(self)
        return out


@dataclass(frozen=True)
class SegmentSet:
    """All segments for one epoch of an image pair.

    Overlapping segments are allowed (hierarchical masks). When image_size
    (width, height) is known, every bbox is checked against it.
    """

    image_tag: str
    segments: tuple[Segment, ...]
    image_size: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.image_tag not in ("T0", "T1"):
            raise FormatError(f"image_tag must be 'T0' or 'T1', got {self.image_tag!r}")
        ids = [s.id for s in self.segments]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise FormatError(f"duplicate segment ids {dup} in {self.image_tag} set")
        for s in self.segments:
            if s.area < 1:
                raise FormatError(f"segment {s.id}: area must be >= 1 in a segment set")
            if self.image_size is not None:
                x, y, w, h = s.bbox
                if x + w > self.image_size[0] or y + h > self.image_size[1]:
                    raise FormatError(
                        f"segment {s.id}: bbox {s.bbox} exceeds image "
                        f"{self.image_size[0]}x{self.image_size[1]}"
                    )

    def __len__(self) -> int:
        return len(self.segments)

    def union_mask(self, image_size: tuple[int, int]) -> np.ndarray:
        out = np.zeros((image_size[1], image_size[0]), dtype=bool)
        for s in self.segments:
            out |= s.full_mask(image_size)
        return out

    def filtered(self, min_area: int) -> "SegmentSet":
        if min_area <= 0:
            return self
        keep = tuple(s for s in self.segments if s.area >= min_area)
        return SegmentSet(self.image_tag, keep, self.image_size)


# --- RLE codec ---------------------------------------------------------------

def decode_rle(segment: Segment) -> np.ndarray:
    """Decode a segment's RLE into a (h, w) boolean mask over its bbox."""
    _, _, w, h = segment.bbox
    extent = w * h
    runs = segment.rle
    if any(r < 0 for r in runs):
        raise FormatError(f"segment {segment.id}: negative run length in {runs}")
    total = sum(runs)
    if total > extent:
        raise RunLengthOverflow(
            f"segment {segment.id}: runs sum to {total} but bbox holds {extent} pixels"
        )
    if total < extent:
        raise FormatError(
            f"segment {segment.id}: runs sum to {total}, short of bbox extent {extent}"
        )
    flat = np.zeros(extent, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    return flat.reshape(h, w)


def encode_rle(mask: np.ndarray) -> list[int]:
    """Encode a 2-D boolean mask as alternating runs, zero-run first."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def segment_from_mask(seg_id: int, mask: np.ndarray) -> Segment:
    """Build a Segment from a full-image boolean mask (tight bbox)."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise FormatError(f"segment {seg_id}: cannot encode an empty mask")
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    x0, x1 = int(cols[0]), int(cols[-1]) + 1
    box = mask[y0:y1, x0:x1]
    return Segment(
        id=seg_id,
        bbox=(x0, y0, x1 - x0, y1 - y0),
        rle=tuple(encode_rle(box)),
        area=int(box.sum()),
    )


# --- ZSTF container ----------------------------------------------------------

def write_array(arr: np.ndarray, path: str | Path) -> None:
    """Write any float32 array as a ZSTF file."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    path = Path(path)
    header = _HEADER_FIXED.pack(MAGIC, VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    dtype = struct.pack("<I", DTYPE_F32)
    payload = arr.astype("<f4", copy=False).tobytes()
    try:
        path.write_bytes(header + dims + dtype + payload)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def read_array(path: str | Path) -> np.ndarray:
    """Read a ZSTF file into a float32 array, validating the container."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if len(blob) < _HEADER_FIXED.size:
        raise TruncatedPayload(f"{path}: file shorter than the fixed header")
    magic, version, ndim = _HEADER_FIXED.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} at offset 0, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version} at offset 4, expected {VERSION}")
    offset = _HEADER_FIXED.size
    dims_end = offset + 4 * ndim + 4
    if len(blob) < dims_end:
        raise TruncatedPayload(f"{path}: header truncated at offset {len(blob)}")
    dims = struct.unpack_from(f"<{ndim}I", blob, offset)
    (dtype_code,) = struct.unpack_from("<I", blob, offset + 4 * ndim)
    if dtype_code != DTYPE_F32:
        raise UnsupportedDtype(
            f"{path}: dtype code {dtype_code} at offset {offset + 4 * ndim}, expected {DTYPE_F32}"
        )
    expected = 4 * int(np.prod(dims, dtype=np.int64)) if ndim else 4
    actual = len(blob) - dims_end
    if actual != expected:
        kind = "short" if actual < expected else "long"
        raise TruncatedPayload(
            f"{path}: payload is {actual} bytes at offset {dims_end}, "
            f"dims {tuple(dims)} require {expected} ({kind})"
        )
    arr = np.frombuffer(blob[dims_end:], dtype="<f4").reshape(dims)
    bad = np.flatnonzero(~np.isfinite(arr.ravel()))
    if bad.size:
        idx = int(bad[0])
        raise NonFiniteValue(
            f"{path}: non-finite value at element {idx} (byte offset {dims_end + 4 * idx})",
            offset=dims_end + 4 * idx,
        )
    return arr.copy()  # decouple from the read buffer


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_tensor(grid: PatchEmbeddingGrid, path: str | Path) -> None:
    """Write an embedding grid: ZSTF tensor plus its metadata sidecar."""
    path = Path(path)
    write_array(grid.data, path)
    meta = {
        "patch_size_px": grid.patch_size_px,
        "image_height_px": grid.image_height_px,
        "image_width_px": grid.image_width_px,
    }
    try:
        _sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write sidecar for {path}: {e}") from e


def read_tensor(
    path: str | Path,
    *,
    patch_size_px: int | None = None,
    image_size: tuple[int, int] | None = None,
) -> PatchEmbeddingGrid:
    """Read an embedding grid from a ZSTF file.

    Grid geometry comes either from the keyword arguments (the pair manifest
    carries them) or, when omitted, from the "<file>.json" sidecar.
    """
    path = Path(path)
    arr = read_array(path)
    if arr.ndim != 3:
        raise FormatError(f"{path}: embedding grids are rank-3, file has ndim {arr.ndim}")
    if patch_size_px is None or image_size is None:
        sidecar = _sidecar_path(path)
        if not sidecar.exists():
            raise FormatError(
                f"{path}: grid metadata not supplied and sidecar {sidecar.name} is missing"
            )
        meta = json.loads(sidecar.read_text())
        patch_size_px = int(meta["patch_size_px"])
        image_size = (int(meta["image_width_px"]), int(meta["image_height_px"]))
    h, w, d = arr.shape
    return PatchEmbeddingGrid(
        height=h, width=w, dim=d, data=arr,
        patch_size_px=patch_size_px,
        image_width_px=image_size[0],
        image_height_px=image_size[1],
    )


# --- segment set JSON ---------------------------------------------------------

def save_segments(segset: SegmentSet, path: str | Path) -> None:
    doc = {
        "image_tag": segset.image_tag,
        "segments": [
            {"id": s.id, "bbox": list(s.bbox), "area": s.area, "rle": list(s.rle)}
            for s in segset.segments
        ],
    }
    try:
        Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_segments(path: str | Path, image_size: tuple[int, int] | None = None) -> SegmentSet:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON: {e}") from e
    try:
        segments = tuple(
            Segment(
                id=int(s["id"]),
                bbox=tuple(s["bbox"]),
                rle=tuple(s["rle"]),
                area=int(s["area"]),
            )
            for s in doc["segments"]
        )
        return SegmentSet(doc["image_tag"], segments, image_size)
    except KeyError as e:
        raise FormatError(f"{path}: missing key {e} in segment JSON") from e


# --- binary mask PNG ------------------------------------------------------------

def write_mask_png(mask: np.ndarray, path: str | Path) -> None:
    """Write a boolean mask as 8-bit grayscale PNG (changed=255)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        raise FormatError("cannot write an empty mask")
    img = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L")
    try:
        img.save(Path(path), format="PNG")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def read_mask_png(path: str | Path) -> np.ndarray:
    """Load a mask PNG as boolean, binarizing 8-bit grayscale at > 127."""
    try:
        with Image.open(Path(path)) as img:
            gray = np.asarray(img.convert("L"))
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    return gray > 127


def read_image_rgb(path: str | Path) -> np.ndarray:
    """Load an RGB image as a (h, w, 3) uint8 array (overlay rendering)."""
    try:
        with Image.open(Path(path)) as img:
            return np.asarray(img.convert("RGB"))
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e


def write_image_rgb(pixels: np.ndarray, path: str | Path) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DimMismatch(f"RGB image must be (h, w, 3), got {pixels.shape}")
    try:
        Image.fromarray(pixels, mode="RGB").save(Path(path), format="PNG")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# --- pair manifest ---------------------------------------------------------------

@dataclass(frozen=True)
class PairManifest:
    """Per-pair manifest: file paths plus the grid geometry shared by both epochs.

    Relative paths resolve against the manifest's directory.
    """

    pair_id: str
    patch_size_px: int
    image_width_px: int
    image_height_px: int
    t0_embeddings: Path
    t0_segments: Path
    t1_embeddings: Path
    t1_segments: Path
    t0_image: Path | None = None
    t1_image: Path | None = None
    ground_truth: Path | None = None
    dataset_tag: str = "custom"
    base_dir: Path = field(default_factory=Path)

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_width_px, self.image_height_px)


def load_pair_manifest(path: str | Path) -> PairManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON: {e}") from e
    base = path.parent

    def resolve(rel: str | None) -> Path | None:
        return None if rel is None else (base / rel)

    try:
        return PairManifest(
            pair_id=str(doc["pair_id"]),
            patch_size_px=int(doc["patch_size_px"]),
            image_width_px=int(doc["image_width_px"]),
            image_height_px=int(doc["image_height_px"]),
            t0_embeddings=resolve(doc["t0"]["embeddings"]),
            t0_segments=resolve(doc["t0"]["segments"]),
            t1_embeddings=resolve(doc["t1"]["embeddings"]),
            t1_segments=resolve(doc["t1"]["segments"]),
            t0_image=resolve(doc["t0"].get("image")),
            t1_image=resolve(doc["t1"].get("image")),
            ground_truth=resolve(doc.get("ground_truth")),
            dataset_tag=str(doc.get("dataset_tag", "custom")),
            base_dir=base,
        )
    except KeyError as e:
        raise FormatError(f"{path}: missing key {e} in pair manifest") from e


def save_pair_manifest(manifest: PairManifest, path: str | Path) -> None:
    base = Path(path).parent

    def rel(p: Path | None) -> str | None:
        if p is None:
            return None
        try:
            return str(Path(p).relative_to(base))
        except ValueError:
            return str(p)

    doc = {
        "pair_id": manifest.pair_id,
        "dataset_tag": manifest.dataset_tag,
        "patch_size_px": manifest.patch_size_px,
        "image_width_px": manifest.image_width_px,
        "image_height_px": manifest.image_height_px,
        "t0": {
            "embeddings": rel(manifest.t0_embeddings),
            "segments": rel(manifest.t0_segments),
        },
        "t1": {
            "embeddings": rel(manifest.t1_embeddings),
            "segments": rel(manifest.t1_segments),
        },
    }
    if manifest.t0_image is not None:
        doc["t0"]["image"] = rel(manifest.t0_image)
    if manifest.t1_image is not None:
        doc["t1"]["image"] = rel(manifest.t1_image)
    if manifest.ground_truth is not None:
        doc["ground_truth"] = rel(manifest.ground_truth)
    try:
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
