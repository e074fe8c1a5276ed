"""Patch-level cosine similarity and argmax correspondence extraction.

Grids are small (H*W in the hundreds) so matching is exact: every source
patch is scored against every target patch and paired with its best match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatch,
    EmptyInput,
    IndexOutOfRange,
    SceneChangeError,
    ZeroNormDescriptor,
)
from .formats import PatchEmbeddingGrid

RANGE_EPS = 1e-5  # cosine entries must sit in [-1-eps, 1+eps]


@dataclass(frozen=True)
class SimilarityMatrix:
    """Cosine similarities between all source and target patches.

    values[i, j] scores source patch i (row-major over the source grid)
    against target patch j. Grid geometry tags along so correspondences can
    be expressed in pixels.
    """

    values: np.ndarray  # float32, (rows, cols)
    source_shape: tuple[int, int]  # (H, W) of the source grid
    target_shape: tuple[int, int]
    patch_size_px: int

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise DimMismatch(f"similarity values must be 2-D, got shape {v.shape}")
        if v.shape[0] != self.source_shape[0] * self.source_shape[1]:
            raise DimMismatch(
                f"{v.shape[0]} rows but source grid is {self.source_shape}"
            )
        if v.shape[1] != self.target_shape[0] * self.target_shape[1]:
            raise DimMismatch(
                f"{v.shape[1]} cols but target grid is {self.target_shape}"
            )
        if v.size:
            lo, hi = float(v.min()), float(v.max())
            if lo < -1.0 - RANGE_EPS or hi > 1.0 + RANGE_EPS:
                raise SceneChangeError(f"cosine values out of range: min {lo}, max {hi}")
        self.values.setflags(write=False)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CorrespondenceSet:
    """One correspondence per source patch: (i -> j) plus pixel centers."""

    source_index: np.ndarray  # (N,) int
    target_index: np.ndarray  # (N,) int
    similarity: np.ndarray  # (N,) float32
    source_xy: np.ndarray  # (N, 2) float64 pixel centers in the source image
    target_xy: np.ndarray  # (N, 2) float64 pixel centers in the target image
    patch_size_px: int

    def __len__(self) -> int:
        return self.source_index.shape[0]

    @property
    def pairs(self) -> list[tuple[int, int, float]]:
        return [
            (int(i), int(j), float(s))
            for i, j, s in zip(self.source_index, self.target_index, self.similarity)
        ]


def _check_norms(norms: np.ndarray, which: str) -> None:
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ZeroNormDescriptor(
            f"{which} grid has a zero-norm descriptor at patch index {int(bad[0])}",
            index=int(bad[0]),
        )


def similarity_matrix(a: PatchEmbeddingGrid, b: PatchEmbeddingGrid) -> SimilarityMatrix:
    """Cosine similarity between every patch of `a` and every patch of `b`.

    Dot products accumulate in float64; the stored matrix is float32.
    """
    if a.dim != b.dim:
        raise DimMismatch(f"descriptor dims differ: {a.dim} vs {b.dim}")
    fa = a.data.reshape(-1, a.dim).astype(np.float64)
    fb = b.data.reshape(-1, b.dim).astype(np.float64)
    norm_a = np.sqrt(np.einsum("ij,ij->i", fa, fa))
    norm_b = np.sqrt(np.einsum("ij,ij->i", fb, fb))
    _check_norms(norm_a, "source")
    _check_norms(norm_b, "target")
    sims = (fa @ fb.T) / np.outer(norm_a, norm_b)
    return SimilarityMatrix(
        values=sims.astype(np.float32),
        source_shape=(a.height, a.width),
        target_shape=(b.height, b.width),
        patch_size_px=a.patch_size_px,
    )


def match_patches(s: SimilarityMatrix, mutual: bool = False) -> CorrespondenceSet:
    """Row-argmax correspondences; ties break to the lowest column index.

    With mutual=True only mutual nearest neighbours are kept (opt-in filter;
    the default keeps one pair per source patch).
    """
    if s.rows == 0 or s.cols == 0:
        raise EmptyInput("similarity matrix is empty")
    src = np.arange(s.rows)
    dst = np.argmax(s.values, axis=1)  # first maximal column per row
    sims = s.values[src, dst]
    if mutual:
        back = np.argmax(s.values, axis=0)
        keep = back[dst] == src
        src, dst, sims = src[keep], dst[keep], sims[keep]
    src_xy = np.stack(
        [patch_center(int(i), s.source_shape, s.patch_size_px) for i in src]
    )
    dst_xy = np.stack(
        [patch_center(int(j), s.target_shape, s.patch_size_px) for j in dst]
    )
    return CorrespondenceSet(
        source_index=src.astype(np.int64),
        target_index=dst.astype(np.int64),
        similarity=sims,
        source_xy=src_xy,
        target_xy=dst_xy,
        patch_size_px=s.patch_size_px,
    )


def patch_center(
    index: int, grid: PatchEmbeddingGrid | tuple[int, int], patch_size_px: int | None = None
) -> tuple[float, float]:
    """Pixel coordinates of a patch center, (col + 0.5, row + 0.5) * patch."""
    if isinstance(grid, PatchEmbeddingGrid):
        shape = (grid.height, grid.width)
        patch = grid.patch_size_px
    else:
        shape = grid
        patch = patch_size_px
        if patch is None:
            raise ValueError("patch_size_px required when grid is a bare shape")
    h, w = shape
    if not 0 <= index < h * w:
        raise IndexOutOfRange(f"patch index {index} outside grid of {h * w} patches")
    row, col = divmod(index, w)
    return ((col + 0.5) * patch, (row + 0.5) * patch)
