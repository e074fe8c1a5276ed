"""Export orchestration: one image pair in, one manifest directory out.

For each pair the exporter writes the same file set the synthetic
generator on the detection side uses, so either source is interchangeable
to the pipeline:

    emb_t0.zstf (+ .json sidecar)   patch-token grid, epoch T0
    emb_t1.zstf (+ .json sidecar)   patch-token grid, epoch T1
    segs_t0.json / segs_t1.json     RLE segment sets
    t0.png / t1.png                 the resized images themselves
    gt.png                          resized binary ground truth (optional)
    pair.json                       manifest tying the files together
    export_state.json               content signature for idempotent reruns

Re-running an export is a no-op when the signature of the inputs and
knobs matches the recorded state, so dataset-scale jobs resume cheaply.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from scdexport import formats
from scdexport.backbones import Backbone, default_resize_for, load_backbone
from scdexport.errors import ImageDecodeError, LayoutMismatch
from scdexport.segments import BACKENDS, finalize_masks, generate_masks

STATE_FILE = "export_state.json"
STATE_VERSION = 1

PAIR_FILES = {
    "t0_embeddings": "emb_t0.zstf",
    "t1_embeddings": "emb_t1.zstf",
    "t0_segments": "segs_t0.json",
    "t1_segments": "segs_t1.json",
    "t0_image": "t0.png",
    "t1_image": "t1.png",
    "manifest": "pair.json",
}

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class ExportJob:
    """Everything needed to export one image pair.

    `resize` is the inference resolution (width, height); when omitted it
    falls back to the backbone preset's default.  It must be divisible by
    the backbone's patch size, which is checked once the model is loaded.
    """

    t0_image: Path
    t1_image: Path
    out_dir: Path
    pair_id: str = "pair"
    backbone: str = "placeformer-like"
    resize: tuple[int, int] | None = None
    points_per_side: int = 32
    segmenter: str = "felzenszwalb"
    sam_checkpoint: Path | None = None
    max_mask_frac: float = 1.0
    min_segment_area: int = 1
    dataset_tag: str = "custom"
    ground_truth: Path | None = None
    weights_root: Path | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "t0_image", Path(self.t0_image))
        object.__setattr__(self, "t1_image", Path(self.t1_image))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.points_per_side < 1:
            raise ValueError(f"points_per_side must be >= 1, got {self.points_per_side}")
        if not 0.0 < self.max_mask_frac <= 1.0:
            raise ValueError(f"max_mask_frac must be in (0, 1], got {self.max_mask_frac}")
        if self.min_segment_area < 1:
            raise ValueError(f"min_segment_area must be >= 1, got {self.min_segment_area}")
        if self.segmenter not in BACKENDS:
            raise ValueError(f"segmenter must be one of {BACKENDS}, got {self.segmenter!r}")
        if self.resize is not None:
            w, h = self.resize
            if w < 1 or h < 1:
                raise ValueError(f"resize must be positive, got {self.resize}")

    @property
    def effective_resize(self) -> tuple[int, int]:
        return self.resize if self.resize is not None else default_resize_for(self.backbone)


def load_image(path: str | Path) -> Image.Image:
    """Open an image as RGB; decode problems surface as ImageDecodeError."""
    try:
        with Image.open(Path(path)) as img:
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError) as e:
        raise ImageDecodeError(f"cannot decode image {path}: {e}", path=str(path)) from e


def neighbor_cosine_spread(grid: np.ndarray) -> float:
    """Largest cosine distance between horizontally/vertically adjacent tokens.

    A cheap smoothness diagnostic reported with every export: smooth
    inputs (e.g. a uniform image) must yield near-identical neighbors.
    """
    g = np.asarray(grid, dtype=np.float64)
    norms = np.sqrt((g * g).sum(axis=2))
    norms = np.maximum(norms, 1e-12)
    unit = g / norms[:, :, None]
    worst = 0.0
    for a, b in ((unit[:, :-1], unit[:, 1:]), (unit[:-1, :], unit[1:, :])):
        if a.size == 0:
            continue
        cos = np.clip((a * b).sum(axis=2), -1.0, 1.0)
        worst = max(worst, float((1.0 - cos).max()))
    return worst


def _validate_divisible(resize: tuple[int, int], patch: int, backbone: str) -> None:
    w, h = resize
    if w % patch or h % patch:
        raise ValueError(
            f"resize {w}x{h} is not divisible by the {backbone!r} patch size {patch}"
        )


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def job_signature(job: ExportJob, backbone: Backbone) -> str:
    """Content hash of the inputs and knobs that determine the outputs.

    Weights are identified by their resolved directory and model config,
    not by hashing the weight tensors; replacing a checkpoint in place
    under the same path therefore needs a manual re-export.
    """
    doc = {
        "version": STATE_VERSION,
        "t0": _sha256_file(job.t0_image),
        "t1": _sha256_file(job.t1_image),
        "gt": _sha256_file(job.ground_truth) if job.ground_truth else None,
        "backbone": backbone.source,
        "backbone_config": backbone.model.config.to_json_string(),
        "resize": list(job.effective_resize),
        "points_per_side": job.points_per_side,
        "segmenter": job.segmenter,
        "max_mask_frac": job.max_mask_frac,
        "min_segment_area": job.min_segment_area,
        "dataset_tag": job.dataset_tag,
        "pair_id": job.pair_id,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _is_current(job: ExportJob, signature: str) -> bool:
    state_path = job.out_dir / STATE_FILE
    if not state_path.is_file():
        return False
    try:
        state = json.loads(state_path.read_text())
    except (OSError, json.JSONDecodeError):
        return False
    if state.get("signature") != signature:
        return False
    return all((job.out_dir / name).is_file() for name in state.get("files", []))


def export_embeddings(job: ExportJob, backbone: Backbone | None = None) -> dict:
    """Run the backbone on both epochs and write the ZSTF grids + sidecars.

    Returns the manifest fragment for the grids: file names, patch size,
    image dims, grid shape, and the per-epoch smoothness diagnostic.
    """
    if backbone is None:
        backbone = load_backbone(job.backbone, job.weights_root)
    resize = job.effective_resize
    _validate_divisible(resize, backbone.patch_size_px, job.backbone)
    job.out_dir.mkdir(parents=True, exist_ok=True)
    out: dict = {
        "patch_size_px": backbone.patch_size_px,
        "image_width_px": resize[0],
        "image_height_px": resize[1],
        "files": {},
        "grid": None,
        "smoothness": {},
    }
    for tag, src in (("t0", job.t0_image), ("t1", job.t1_image)):
        pixels = backbone.preprocess(load_image(src), resize)
        grid = backbone.embed(pixels)
        name = PAIR_FILES[f"{tag}_embeddings"]
        formats.write_embedding_grid(
            grid, backbone.patch_size_px, resize[0], resize[1], job.out_dir / name
        )
        out["files"][tag] = name
        out["grid"] = list(grid.shape)
        out["smoothness"][tag] = neighbor_cosine_spread(grid)
    return out


def export_segments(job: ExportJob, backbone: Backbone | None = None) -> dict:
    """Segment both epochs and write the RLE segment-set JSON files."""
    if backbone is None:
        backbone = load_backbone(job.backbone, job.weights_root)
    resize = job.effective_resize
    _validate_divisible(resize, backbone.patch_size_px, job.backbone)
    job.out_dir.mkdir(parents=True, exist_ok=True)
    out: dict = {"files": {}, "counts": {}}
    for tag, src in (("t0", job.t0_image), ("t1", job.t1_image)):
        image = load_image(src).resize(resize, Image.Resampling.BILINEAR)
        masks = generate_masks(
            np.asarray(image), job.points_per_side, job.segmenter, job.sam_checkpoint
        )
        masks = finalize_masks(masks, job.max_mask_frac, job.min_segment_area)
        name = PAIR_FILES[f"{tag}_segments"]
        formats.write_segments(tag.upper(), masks, job.out_dir / name)
        out["files"][tag] = name
        out["counts"][tag] = len(masks)
    return out


def _export_ground_truth(job: ExportJob, resize: tuple[int, int]) -> str:
    """Resize the truth mask (nearest-neighbor) and rewrite it as 0/255 PNG."""
    try:
        with Image.open(job.ground_truth) as img:
            gray = img.convert("L").resize(resize, Image.Resampling.NEAREST)
    except (UnidentifiedImageError, OSError) as e:
        raise ImageDecodeError(
            f"cannot decode ground truth {job.ground_truth}: {e}",
            path=str(job.ground_truth),
        ) from e
    formats.write_mask_png(np.asarray(gray) > 127, job.out_dir / "gt.png")
    return "gt.png"


def export_pair(job: ExportJob, backbone: Backbone | None = None) -> dict:
    """Export one full pair directory; skips work when outputs are current."""
    if backbone is None:
        backbone = load_backbone(job.backbone, job.weights_root)
    signature = job_signature(job, backbone)
    if _is_current(job, signature):
        return {"pair_id": job.pair_id, "out_dir": str(job.out_dir), "skipped": True}

    emb = export_embeddings(job, backbone)
    segs = export_segments(job, backbone)
    resize = job.effective_resize
    files = [
        PAIR_FILES["t0_embeddings"],
        formats.sidecar_path(Path(PAIR_FILES["t0_embeddings"])).name,
        PAIR_FILES["t1_embeddings"],
        formats.sidecar_path(Path(PAIR_FILES["t1_embeddings"])).name,
        PAIR_FILES["t0_segments"],
        PAIR_FILES["t1_segments"],
    ]
    for tag, src in (("t0", job.t0_image), ("t1", job.t1_image)):
        image = load_image(src).resize(resize, Image.Resampling.BILINEAR)
        name = PAIR_FILES[f"{tag}_image"]
        formats.write_image_rgb(np.asarray(image), job.out_dir / name)
        files.append(name)
    gt_name = None
    if job.ground_truth is not None:
        gt_name = _export_ground_truth(job, resize)
        files.append(gt_name)
    formats.write_pair_manifest(
        job.out_dir / PAIR_FILES["manifest"],
        pair_id=job.pair_id,
        dataset_tag=job.dataset_tag,
        patch_size_px=emb["patch_size_px"],
        image_width_px=resize[0],
        image_height_px=resize[1],
        t0_embeddings=PAIR_FILES["t0_embeddings"],
        t0_segments=PAIR_FILES["t0_segments"],
        t1_embeddings=PAIR_FILES["t1_embeddings"],
        t1_segments=PAIR_FILES["t1_segments"],
        t0_image=PAIR_FILES["t0_image"],
        t1_image=PAIR_FILES["t1_image"],
        ground_truth=gt_name,
    )
    files.append(PAIR_FILES["manifest"])
    formats.atomic_write_text(
        job.out_dir / STATE_FILE,
        json.dumps({"signature": signature, "files": files}, sort_keys=True, indent=1) + "\n",
    )
    return {
        "pair_id": job.pair_id,
        "out_dir": str(job.out_dir),
        "skipped": False,
        "backbone": backbone.source,
        "patch_size_px": emb["patch_size_px"],
        "grid": emb["grid"],
        "resize": list(resize),
        "smoothness": emb["smoothness"],
        "segments": segs["counts"],
        "files": files,
    }


def _find_image(pair_dir: Path, stem: str) -> Path | None:
    for suffix in IMAGE_SUFFIXES:
        candidate = pair_dir / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


def export_dataset(root: str | Path, out_root: str | Path, job: ExportJob) -> dict:
    """Export every pair under `root/pairs/` into the same layout at `out_root`.

    `job` acts as the knob template; its image paths, pair id, and output
    dir are replaced per pair.  The backbone loads once for the whole run.
    Re-runs skip pairs whose recorded signature still matches.
    """
    root = Path(root)
    pairs_dir = root / "pairs"
    if not pairs_dir.is_dir():
        raise LayoutMismatch(f"{root}: no pairs/ directory (expected pairs/<id>/t0.png ...)")
    pair_dirs = sorted(p for p in pairs_dir.iterdir() if p.is_dir())
    if not pair_dirs:
        raise LayoutMismatch(f"{root}: pairs/ holds no pair directories")
    backbone = load_backbone(job.backbone, job.weights_root)
    exported = skipped = 0
    summaries = []
    for pair_dir in pair_dirs:
        t0 = _find_image(pair_dir, "t0")
        t1 = _find_image(pair_dir, "t1")
        if t0 is None or t1 is None:
            raise LayoutMismatch(
                f"pair {pair_dir.name}: needs t0/t1 images "
                f"({'|'.join(IMAGE_SUFFIXES)}) in {pair_dir}"
            )
        pair_job = replace(
            job,
            t0_image=t0,
            t1_image=t1,
            ground_truth=_find_image(pair_dir, "gt"),
            pair_id=pair_dir.name,
            out_dir=Path(out_root) / "pairs" / pair_dir.name,
        )
        summary = export_pair(pair_job, backbone)
        if summary["skipped"]:
            skipped += 1
        else:
            exported += 1
        summaries.append(summary)
    return {
        "out_dir": str(out_root),
        "dataset_tag": job.dataset_tag,
        "pairs": len(pair_dirs),
        "exported": exported,
        "skipped": skipped,
        "pair_summaries": summaries,
    }
