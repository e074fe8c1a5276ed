"""Coarse patch-level change maps and segment-guided boundary refinement.

The coarse stage projects each patch center of one grid into the other image
plane, looks up the patch containing the projected point, and measures the
Euclidean distance between the two L2-normalized descriptors. Distances
therefore live in [0, 2] and the change threshold is backbone-independent.

Refinement promotes whole segments: a segment whose overlap with the coarse
map exceeds alpha is kept only if the corresponding region in the other
epoch (located through the homography) fails to cover it, i.e. the change is
confirmed both photometrically and geometrically.

Norm conventions: every vector norm here is sqrt(dot(v, v)) and per-patch
work is done with scalar numpy ops in a fixed order, so an explicit
re-derivation loop reproduces the maps bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptySegment, ZeroNormDescriptor
from .formats import PatchEmbeddingGrid, SegmentSet
from .geometry import Homography, W_EPS, warp_mask


@dataclass(frozen=True)
class ChangeParams:
    """Thresholds for coarse detection and segment refinement.

    tau: descriptor-distance change threshold on [0, 2] distances.
    alpha: minimum segment/coarse-map overlap ratio to flag a segment.
    beta: cross-image overlap ratio below which a flagged segment is confirmed.
    """

    tau: float = 0.65
    alpha: float = 0.8
    beta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.tau <= 2.0:
            raise ValueError(f"tau must be in (0, 2], got {self.tau}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")


@dataclass(frozen=True)
class CoarseChangeMap:
    """Patch-level descriptor distances and their thresholded change grid.

    All three arrays share the source grid's (H, W) shape. Invalid cells are
    projections that left the other image (or hit infinity); they carry
    diff = 0 and are never marked changed.
    """

    diff: np.ndarray  # float64 distances
    changed: np.ndarray  # bool
    valid: np.ndarray  # bool

    def __post_init__(self):
        if not (self.diff.shape == self.changed.shape == self.valid.shape):
            raise DimMismatch(
                f"shape mismatch: diff {self.diff.shape}, changed "
                f"{self.changed.shape}, valid {self.valid.shape}"
            )
        for arr in (self.diff, self.changed, self.valid):
            arr.setflags(write=False)


@dataclass(frozen=True)
class SegmentContribution:
    """Provenance for one accepted segment in the final mask."""

    segment_id: int
    epoch: str  # "T0" | "T1"
    kind: str  # "disappeared" | "appeared"
    gamma: float
    cross_overlap: float


@dataclass(frozen=True)
class ChangeResult:
    """Final pixel mask in the T1 frame plus per-segment provenance."""

    mask: np.ndarray
    contributions: tuple[SegmentContribution, ...]

    def __post_init__(self):
        object.__setattr__(self, "contributions", tuple(self.contributions))
        self.mask.setflags(write=False)


def _normalized_rows(grid: PatchEmbeddingGrid, which: str) -> np.ndarray:
    """L2-normalize each descriptor; float64; norms via sqrt(dot)."""
    flat = grid.data.reshape(-1, grid.dim).astype(np.float64)
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        v = flat[i]
        norm = np.sqrt(np.dot(v, v))
        if norm == 0.0:
            raise ZeroNormDescriptor(
                f"{which} grid has a zero-norm descriptor at patch index {i}", index=i
            )
        out[i] = v / norm
    return out


def coarse_change_map(
    a: PatchEmbeddingGrid,
    b: PatchEmbeddingGrid,
    h: Homography,
    params: ChangeParams,
) -> CoarseChangeMap:
    """Descriptor-distance map over a's patch grid, against b under h.

    Each patch center of `a` projects through `h` into b's plane and is
    assigned the patch containing the projected point (the nearest patch
    center; boundary ties go to the higher index). In-bounds cells get the
    Euclidean distance between the L2-normalized descriptors and are marked
    changed when it exceeds params.tau.
    """
    if a.dim != b.dim:
        raise DimMismatch(f"descriptor dims differ: {a.dim} vs {b.dim}")
    na = _normalized_rows(a, "source")
    nb = _normalized_rows(b, "target")
    m = h.m
    ps_a = float(a.patch_size_px)
    ps_b = float(b.patch_size_px)
    diff = np.zeros((a.height, a.width), dtype=np.float64)
    valid = np.zeros((a.height, a.width), dtype=bool)
    for r in range(a.height):
        for c in range(a.width):
            x = (c + 0.5) * ps_a
            y = (r + 0.5) * ps_a
            u = m[0, 0] * x + m[0, 1] * y + m[0, 2]
            v = m[1, 0] * x + m[1, 1] * y + m[1, 2]
            w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
            if abs(w) <= W_EPS:
                continue
            cb = int(np.floor((u / w) / ps_b))
            rb = int(np.floor((v / w) / ps_b))
            if not (0 <= cb < b.width and 0 <= rb < b.height):
                continue
            e = na[r * a.width + c] - nb[rb * b.width + cb]
            diff[r, c] = np.sqrt(np.dot(e, e))
            valid[r, c] = True
    changed = valid & (diff > params.tau)
    return CoarseChangeMap(diff=diff, changed=changed, valid=valid)


def threshold_coarse(map_: CoarseChangeMap, tau: float) -> CoarseChangeMap:
    """Re-threshold an existing diff map; sweeps reuse projections this way."""
    changed = map_.valid & (map_.diff > tau)
    return CoarseChangeMap(
        diff=map_.diff.copy(), changed=changed, valid=map_.valid.copy()
    )


def rasterize_coarse(
    map_: CoarseChangeMap, image_dims: tuple[int, int], patch_size_px: int
) -> np.ndarray:
    """Nearest-neighbor upsample: each changed patch paints its pixel block."""
    w_img, h_img = image_dims
    grid_h, grid_w = map_.changed.shape
    if grid_h * patch_size_px >= h_img + patch_size_px or \
       grid_w * patch_size_px >= w_img + patch_size_px:
        raise DimMismatch(
            f"grid {grid_h}x{grid_w} at patch {patch_size_px} does not fit "
            f"image {w_img}x{h_img}"
        )
    out = np.zeros((h_img, w_img), dtype=bool)
    for r, c in zip(*np.nonzero(map_.changed)):
        y0 = r * patch_size_px
        x0 = c * patch_size_px
        out[y0:min(y0 + patch_size_px, h_img), x0:min(x0 + patch_size_px, w_img)] = True
    return out


def overlap_ratio(seg_mask: np.ndarray, region: np.ndarray) -> float:
    """Fraction of the segment covered by the region: |seg & region| / |seg|."""
    seg_mask = np.asarray(seg_mask, dtype=bool)
    region = np.asarray(region, dtype=bool)
    if seg_mask.shape != region.shape:
        raise DimMismatch(f"mask dims differ: {seg_mask.shape} vs {region.shape}")
    area = int(seg_mask.sum())
    if area == 0:
        raise EmptySegment("segment mask has zero area")
    return int((seg_mask & region).sum()) / area


def refine_changes(
    coarse_px: np.ndarray,
    coarse_px_t0: np.ndarray,
    segs_t0: SegmentSet,
    segs_t1: SegmentSet,
    h: Homography,
    params: ChangeParams,
) -> ChangeResult:
    """Promote segments overlapping the coarse maps into the final change mask.

    T1 segments are tested against the T1-frame coarse map and, when flagged,
    cross-checked against the T0 segmentation warped through inverse(h);
    surviving segments are "appeared". T0 segments run the mirror-image path
    ("disappeared") and enter the final mask warped into the T1 frame.

    The cross-check for a flagged segment s: warp s into the other frame,
    intersect that footprint with the union of the other epoch's segments,
    warp the intersection back, and measure its overlap with s. A ratio
    below params.beta confirms the change.
    """
    t1_dims = (coarse_px.shape[1], coarse_px.shape[0])  # (w, h)
    t0_dims = (coarse_px_t0.shape[1], coarse_px_t0.shape[0])
    hinv = h.inverse()
    union_t0 = segs_t0.union_mask(t0_dims)
    union_t1 = segs_t1.union_mask(t1_dims)

    contributions: list[SegmentContribution] = []
    mask = np.zeros_like(coarse_px, dtype=bool)

    for seg in sorted(segs_t0.segments, key=lambda s: s.id):
        full = seg.full_mask(t0_dims)
        gamma = overlap_ratio(full, coarse_px_t0)
        if gamma <= params.alpha:
            continue
        footprint = warp_mask(h, full, t1_dims)
        counterpart = union_t1 & footprint
        back = warp_mask(hinv, counterpart, t0_dims)
        cross = overlap_ratio(full, back)
        if cross < params.beta:
            contributions.append(SegmentContribution(
                segment_id=seg.id, epoch="T0", kind="disappeared",
                gamma=gamma, cross_overlap=cross,
            ))
            mask |= footprint

    for seg in sorted(segs_t1.segments, key=lambda s: s.id):
        full = seg.full_mask(t1_dims)
        gamma = overlap_ratio(full, coarse_px)
        if gamma <= params.alpha:
            continue
        footprint = warp_mask(hinv, full, t0_dims)
        counterpart = union_t0 & footprint
        back = warp_mask(h, counterpart, t1_dims)
        cross = overlap_ratio(full, back)
        if cross < params.beta:
            contributions.append(SegmentContribution(
                segment_id=seg.id, epoch="T1", kind="appeared",
                gamma=gamma, cross_overlap=cross,
            ))
            mask |= full

    contributions.sort(key=lambda c: (c.epoch, c.segment_id))
    return ChangeResult(mask=mask, contributions=tuple(contributions))
