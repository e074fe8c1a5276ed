"""Synthetic pair construction for tests, demos and benchmarks without data.

Pairs are built in the T1 frame: a base grid of random unit descriptors is
shared by both epochs through a known pixel homography (identity or a
patch-aligned translation), then a rectangular patch region of one epoch is
negated so its normalized descriptor distance becomes exactly 2.0. Segment
sets are planted to match, and the ground truth is the changed rectangle in
T1 pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import (
    PairManifest,
    PatchEmbeddingGrid,
    Segment,
    SegmentSet,
    save_pair_manifest,
    save_segments,
    segment_from_mask,
    write_mask_png,
    write_image_rgb,
    write_tensor,
)
from .geometry import Homography


@dataclass(frozen=True)
class SyntheticPair:
    grid_t0: PatchEmbeddingGrid
    grid_t1: PatchEmbeddingGrid
    segs_t0: SegmentSet
    segs_t1: SegmentSet
    homography: Homography  # true T0 -> T1 transform
    truth_mask: np.ndarray  # T1-frame pixels
    patch_size_px: int


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    return (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32)


def make_pair(
    seed: int,
    *,
    grid_h: int = 16,
    grid_w: int = 16,
    dim: int = 32,
    patch: int = 16,
    shift_patches: tuple[int, int] = (0, 0),
    planted: tuple[int, int, int, int] | None = (5, 5, 9, 9),
    kind: str = "appeared",
) -> SyntheticPair:
    """Build one synthetic pair.

    shift_patches (dx, dy) displaces T1 content relative to T0, so the true
    homography is a translation by (dx*patch, dy*patch) pixels. `planted`
    is (r0, c0, r1, c1) half-open in T1 patch coordinates, or None for a
    no-change pair. `kind` picks which epoch's segmentation contains the
    changed object ("appeared" = T1, "disappeared" = T0).
    """
    if kind not in ("appeared", "disappeared"):
        raise ValueError(f"kind must be 'appeared' or 'disappeared', got {kind}")
    dx, dy = shift_patches
    rng = np.random.default_rng(seed)
    base = _unit_rows(rng, grid_h * grid_w, dim).reshape(grid_h, grid_w, dim)
    noise = _unit_rows(rng, grid_h * grid_w, dim).reshape(grid_h, grid_w, dim)

    # T0 patch (r, c) shows the content of T1 patch (r+dy, c+dx); patches
    # shifted out of frame get independent noise (RANSAC outliers).
    data_t0 = np.empty_like(base)
    for r in range(grid_h):
        for c in range(grid_w):
            rr, cc = r + dy, c + dx
            if 0 <= rr < grid_h and 0 <= cc < grid_w:
                data_t0[r, c] = base[rr, cc]
            else:
                data_t0[r, c] = noise[r, c]
    data_t1 = base.copy()

    img_w, img_h = grid_w * patch, grid_h * patch
    truth = np.zeros((img_h, img_w), dtype=bool)
    if planted is not None:
        r0, c0, r1, c1 = planted
        if not (0 <= r0 < r1 <= grid_h and 0 <= c0 < c1 <= grid_w):
            raise ValueError(f"planted rect {planted} outside {grid_h}x{grid_w} grid")
        # negation gives normalized descriptor distance exactly 2.0
        data_t1[r0:r1, c0:c1] = -data_t1[r0:r1, c0:c1]
        truth[r0 * patch:r1 * patch, c0 * patch:c1 * patch] = True

    mk = lambda d: PatchEmbeddingGrid(
        height=grid_h, width=grid_w, dim=dim, data=d, patch_size_px=patch,
        image_height_px=img_h, image_width_px=img_w,
    )
    h_true = Homography(
        np.array([[1.0, 0.0, dx * patch], [0.0, 1.0, dy * patch], [0.0, 0.0, 1.0]])
    )

    segs_t0, segs_t1 = _plant_segments(
        rng, (img_w, img_h), patch, planted, shift_patches, kind, (grid_h, grid_w)
    )
    return SyntheticPair(
        grid_t0=mk(data_t0), grid_t1=mk(data_t1),
        segs_t0=segs_t0, segs_t1=segs_t1,
        homography=h_true, truth_mask=truth, patch_size_px=patch,
    )


def _plant_segments(rng, image_size, patch, planted, shift, kind, grid_shape):
    img_w, img_h = image_size
    grid_h, grid_w = grid_shape
    dx, dy = shift

    def rect_mask(r0, c0, r1, c1):
        m = np.zeros((img_h, img_w), dtype=bool)
        m[r0 * patch:r1 * patch, c0 * patch:c1 * patch] = True
        return m

    segs_t0: list[Segment] = []
    segs_t1: list[Segment] = []
    next_id = 1
    blocked_t1: list[tuple[int, int, int, int]] = []  # patch rects to keep decoys away from
    blocked_t0: list[tuple[int, int, int, int]] = []

    if planted is not None:
        r0, c0, r1, c1 = planted
        pre = (r0 - dy, c0 - dx, r1 - dy, c1 - dx)  # T0 patch rect mapping onto planted
        blocked_t1.append(planted)
        blocked_t0.append(pre)
        if kind == "appeared":
            segs_t1.append(segment_from_mask(next_id, rect_mask(*planted)))
        else:
            if not (0 <= pre[0] < pre[2] <= grid_h and 0 <= pre[1] < pre[3] <= grid_w):
                raise ValueError(
                    f"pre-image rect {pre} of planted {planted} leaves the T0 grid"
                )
            segs_t0.append(segment_from_mask(next_id, rect_mask(*pre)))
        next_id += 1

    # decoy segments: small rects in quiet areas of both epochs
    def place_decoys(target, blocked, count):
        nonlocal next_id
        tries = 0
        while count > 0 and tries < 200:
            tries += 1
            hh = int(rng.integers(1, 3))
            ww = int(rng.integers(1, 3))
            r0 = int(rng.integers(0, grid_h - hh + 1))
            c0 = int(rng.integers(0, grid_w - ww + 1))
            rect = (r0, c0, r0 + hh, c0 + ww)
            if any(_rects_touch(rect, b) for b in blocked):
                continue
            target.append(segment_from_mask(next_id, rect_mask(*rect)))
            blocked.append(rect)
            next_id += 1
            count -= 1

    place_decoys(segs_t0, blocked_t0, 2)
    place_decoys(segs_t1, blocked_t1, 2)
    return (
        SegmentSet("T0", tuple(segs_t0), image_size),
        SegmentSet("T1", tuple(segs_t1), image_size),
    )


def _rects_touch(a, b) -> bool:
    return not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1])


def _render_image(grid: PatchEmbeddingGrid) -> np.ndarray:
    """Deterministic RGB visualization: each patch painted from its descriptor."""
    colors = (np.abs(grid.data[:, :, :3]) * 255.0).clip(0, 255).astype(np.uint8)
    img = np.repeat(np.repeat(colors, grid.patch_size_px, axis=0),
                    grid.patch_size_px, axis=1)
    return img[: grid.image_height_px, : grid.image_width_px]


def write_pair_dir(pair: SyntheticPair, pair_dir: str | Path, pair_id: str) -> Path:
    """Write a full pair directory (embeddings, segments, images, gt, manifest)."""
    pair_dir = Path(pair_dir)
    pair_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(pair.grid_t0, pair_dir / "emb_t0.zstf")
    write_tensor(pair.grid_t1, pair_dir / "emb_t1.zstf")
    save_segments(pair.segs_t0, pair_dir / "segs_t0.json")
    save_segments(pair.segs_t1, pair_dir / "segs_t1.json")
    write_image_rgb(_render_image(pair.grid_t0), pair_dir / "t0.png")
    write_image_rgb(_render_image(pair.grid_t1), pair_dir / "t1.png")
    write_mask_png(pair.truth_mask, pair_dir / "gt.png")
    manifest = PairManifest(
        pair_id=pair_id,
        patch_size_px=pair.patch_size_px,
        image_width_px=pair.grid_t1.image_width_px,
        image_height_px=pair.grid_t1.image_height_px,
        t0_embeddings=pair_dir / "emb_t0.zstf",
        t0_segments=pair_dir / "segs_t0.json",
        t1_embeddings=pair_dir / "emb_t1.zstf",
        t1_segments=pair_dir / "segs_t1.json",
        t0_image=pair_dir / "t0.png",
        t1_image=pair_dir / "t1.png",
        ground_truth=pair_dir / "gt.png",
        base_dir=pair_dir,
    )
    mpath = pair_dir / "pair.json"
    save_pair_manifest(manifest, mpath)
    return mpath


def make_dataset(root: str | Path, n_pairs: int = 10, seed: int = 7) -> list[Path]:
    """Build a synthetic exported-tree dataset with a mix of pair kinds."""
    root = Path(root)
    manifests = []
    for i in range(n_pairs):
        pair_seed = seed * 1000 + i
        variant = i % 4
        if variant == 0:
            pair = make_pair(pair_seed, shift_patches=(0, 0), planted=(4, 4, 8, 8))
        elif variant == 1:
            pair = make_pair(pair_seed, shift_patches=(2, 1), planted=(6, 7, 9, 10))
        elif variant == 2:
            pair = make_pair(pair_seed, shift_patches=(1, 2), planted=(8, 3, 11, 6),
                             kind="disappeared")
        else:
            pair = make_pair(pair_seed, shift_patches=(1, 0), planted=None)
        pair_id = f"{i:06d}"
        manifests.append(write_pair_dir(pair, root / "pairs" / pair_id, pair_id))
    (root / "dataset.json").write_text(
        json.dumps({"tag": "custom", "pairs": n_pairs, "seed": seed}, sort_keys=True) + "\n"
    )
    return manifests
