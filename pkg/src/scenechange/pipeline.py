"""End-to-end detection pipeline: embeddings + segments in, change mask out.

Stages: cosine similarity over patch descriptors -> argmax correspondences ->
robust homography -> coarse per-patch change maps in both frames ->
segment-guided refinement. The detection result carries the coarse maps and
per-segment contributions so sweeps and reports can reuse intermediate state
instead of recomputing it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .changes import (
    ChangeParams,
    ChangeResult,
    CoarseChangeMap,
    coarse_change_map,
    rasterize_coarse,
    refine_changes,
    threshold_coarse,
)
from .formats import (
    PairManifest,
    PatchEmbeddingGrid,
    SegmentSet,
    load_pair_manifest,
    load_segments,
    read_mask_png,
    read_tensor,
)
from .geometry import Homography, RansacConfig, ransac_homography
from .matching import match_patches, similarity_matrix


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one detection run; everything that affects the output."""

    change: ChangeParams = field(default_factory=ChangeParams)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    min_segment_area: int = 1
    mutual_matches: bool = False
    cache_dir: Path | None = None

    def __post_init__(self) -> None:
        if self.min_segment_area < 1:
            raise ValueError(
                f"min_segment_area must be >= 1, got {self.min_segment_area}"
            )


@dataclass(frozen=True)
class LoadedPair:
    pair_id: str
    grid_t0: PatchEmbeddingGrid
    grid_t1: PatchEmbeddingGrid
    segs_t0: SegmentSet
    segs_t1: SegmentSet
    truth_mask: np.ndarray | None = None
    manifest: PairManifest | None = None


@dataclass(frozen=True)
class DetectionResult:
    pair_id: str
    mask: np.ndarray  # T1-frame boolean change mask
    homography: Homography
    n_correspondences: int
    inlier_count: int
    coarse_t1: CoarseChangeMap
    coarse_t0: CoarseChangeMap
    result: ChangeResult

    @property
    def inlier_ratio(self) -> float:
        if self.n_correspondences == 0:
            return 0.0
        return self.inlier_count / self.n_correspondences

    def to_json_dict(self, params: ChangeParams) -> dict:
        return {
            "pair_id": self.pair_id,
            "homography": [[float(v) for v in row] for row in self.homography.m],
            "n_correspondences": self.n_correspondences,
            "inlier_count": self.inlier_count,
            "inlier_ratio": self.inlier_ratio,
            "changed_pixels": int(self.mask.sum()),
            "mask_shape": [int(s) for s in self.mask.shape],
            "params": {
                "tau": params.tau,
                "alpha": params.alpha,
                "beta": params.beta,
            },
            "contributions": [
                {
                    "segment_id": c.segment_id,
                    "epoch": c.epoch,
                    "kind": c.kind,
                    "gamma": c.gamma,
                    "cross_overlap": c.cross_overlap,
                }
                for c in self.result.contributions
            ],
        }


def load_pair(manifest: PairManifest | str | Path) -> LoadedPair:
    """Materialize a pair from its manifest (embeddings, segments, truth)."""
    if not isinstance(manifest, PairManifest):
        manifest = load_pair_manifest(manifest)
    grid_t0 = read_tensor(manifest.t0_embeddings)
    grid_t1 = read_tensor(manifest.t1_embeddings)
    segs_t0 = load_segments(manifest.t0_segments)
    segs_t1 = load_segments(manifest.t1_segments)
    truth = None
    if manifest.ground_truth is not None:
        truth = read_mask_png(manifest.ground_truth)
    return LoadedPair(
        pair_id=manifest.pair_id,
        grid_t0=grid_t0,
        grid_t1=grid_t1,
        segs_t0=segs_t0,
        segs_t1=segs_t1,
        truth_mask=truth,
        manifest=manifest,
    )


def _cache_key(
    grid_t0: PatchEmbeddingGrid, grid_t1: PatchEmbeddingGrid, config: PipelineConfig
) -> str:
    tol = config.ransac.resolve_tolerance(grid_t0.patch_size_px)
    h = hashlib.sha256()
    h.update(b"homography-cache-v1")
    h.update(np.ascontiguousarray(grid_t0.data).tobytes())
    h.update(np.ascontiguousarray(grid_t1.data).tobytes())
    meta = (
        (grid_t0.height, grid_t0.width, grid_t0.dim),
        (grid_t1.height, grid_t1.width, grid_t1.dim),
        grid_t0.patch_size_px,
        config.ransac.iterations,
        tol,
        config.ransac.seed,
        config.ransac.min_inliers,
        config.mutual_matches,
    )
    h.update(repr(meta).encode())
    return h.hexdigest()


def _cache_load(path: Path) -> tuple[Homography, int, int] | None:
    try:
        blob = json.loads(path.read_text())
        m = np.array(blob["matrix"], dtype=np.float64)
        return (
            Homography(m, inlier_count=int(blob["inlier_count"])),
            int(blob["n_correspondences"]),
            int(blob["inlier_count"]),
        )
    except (OSError, ValueError, KeyError, TypeError):
        return None


def _cache_store(path: Path, h: Homography, n_corr: int, inliers: int) -> None:
    blob = {
        "matrix": [[float(v) for v in row] for row in h.m],
        "n_correspondences": n_corr,
        "inlier_count": inliers,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(blob, fh)
        os.replace(tmp, path)
    except OSError:
        try:
            os.unlink(tmp)
        except OSError:
            pass


def estimate_homography(
    grid_t0: PatchEmbeddingGrid,
    grid_t1: PatchEmbeddingGrid,
    config: PipelineConfig,
) -> tuple[Homography, int, int]:
    """Fit the T0 -> T1 homography from argmax patch correspondences.

    Returns (homography, n_correspondences, inlier_count). Results are cached
    by content hash of both grids plus the fitting configuration, so repeated
    runs over the same export skip the RANSAC loop entirely.
    """
    cache_path = None
    if config.cache_dir is not None:
        cache_path = Path(config.cache_dir) / f"{_cache_key(grid_t0, grid_t1, config)}.json"
        if cache_path.exists():
            cached = _cache_load(cache_path)
            if cached is not None:
                return cached

    sim = similarity_matrix(grid_t0, grid_t1)
    matches = match_patches(sim, mutual=config.mutual_matches)
    h = ransac_homography(matches, config.ransac)
    n_corr, inliers = len(matches), h.inlier_count

    if cache_path is not None:
        _cache_store(cache_path, h, n_corr, inliers)
    return h, n_corr, inliers


def _coarse_maps(
    pair: LoadedPair, h: Homography, params: ChangeParams
) -> tuple[CoarseChangeMap, CoarseChangeMap]:
    """Per-patch change maps in the T1 and T0 frames respectively."""
    coarse_t1 = coarse_change_map(pair.grid_t1, pair.grid_t0, h.inverse(), params)
    coarse_t0 = coarse_change_map(pair.grid_t0, pair.grid_t1, h, params)
    return coarse_t1, coarse_t0


def _refine(
    pair: LoadedPair,
    h: Homography,
    coarse_t1: CoarseChangeMap,
    coarse_t0: CoarseChangeMap,
    config: PipelineConfig,
) -> ChangeResult:
    g1, g0 = pair.grid_t1, pair.grid_t0
    coarse_px = rasterize_coarse(
        coarse_t1, (g1.image_width_px, g1.image_height_px), g1.patch_size_px
    )
    coarse_px_t0 = rasterize_coarse(
        coarse_t0, (g0.image_width_px, g0.image_height_px), g0.patch_size_px
    )
    return refine_changes(
        coarse_px,
        coarse_px_t0,
        pair.segs_t0.filtered(config.min_segment_area),
        pair.segs_t1.filtered(config.min_segment_area),
        h,
        config.change,
    )


def detect_pair(pair: LoadedPair, config: PipelineConfig) -> DetectionResult:
    """Run the full pipeline on one loaded pair."""
    h, n_corr, inliers = estimate_homography(pair.grid_t0, pair.grid_t1, config)
    coarse_t1, coarse_t0 = _coarse_maps(pair, h, config.change)
    result = _refine(pair, h, coarse_t1, coarse_t0, config)
    return DetectionResult(
        pair_id=pair.pair_id,
        mask=result.mask,
        homography=h,
        n_correspondences=n_corr,
        inlier_count=inliers,
        coarse_t1=coarse_t1,
        coarse_t0=coarse_t0,
        result=result,
    )


def sweep_pair(
    pair: LoadedPair, config: PipelineConfig, taus: tuple[float, ...]
) -> dict[float, DetectionResult]:
    """Detect at several thresholds, reusing the homography and distance maps.

    The per-patch descriptor distances do not depend on tau, so each
    threshold only re-derives the boolean layers and re-runs refinement.
    """
    if not taus:
        raise ValueError("sweep needs at least one threshold")
    h, n_corr, inliers = estimate_homography(pair.grid_t0, pair.grid_t1, config)
    base_t1, base_t0 = _coarse_maps(pair, h, config.change)
    out: dict[float, DetectionResult] = {}
    for tau in taus:
        params = dataclasses.replace(config.change, tau=tau)
        cfg = dataclasses.replace(config, change=params)
        coarse_t1 = threshold_coarse(base_t1, tau)
        coarse_t0 = threshold_coarse(base_t0, tau)
        result = _refine(pair, h, coarse_t1, coarse_t0, cfg)
        out[tau] = DetectionResult(
            pair_id=pair.pair_id,
            mask=result.mask,
            homography=h,
            n_correspondences=n_corr,
            inlier_count=inliers,
            coarse_t1=coarse_t1,
            coarse_t0=coarse_t0,
            result=result,
        )
    return out
