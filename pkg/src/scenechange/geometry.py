"""Robust homography fitting and projective warps.

The solver is a Hartley-normalized DLT wrapped in seeded RANSAC. All
randomness flows through a self-contained xoshiro256** generator so runs are
bitwise reproducible from (seed, iteration index) alone, independent of any
runtime's RNG. Point projection uses explicit per-coordinate arithmetic
(never matmul) so scalar and vectorized paths produce identical floats —
several downstream oracles rely on that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConfiguration,
    InsufficientCorrespondences,
    NoConsensus,
    PointAtInfinity,
    RankDeficient,
)
from .matching import CorrespondenceSet

W_EPS = 1e-12  # homogeneous scale below this is "at infinity"
COLLINEAR_AREA_EPS = 1e-9
DEFAULT_TOLERANCE_FACTOR = 1.25  # inlier tolerance = 1.25 x patch size

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class Xoshiro256StarStar:
    """xoshiro256** 1.0 (Blackman & Vigna), seeded through splitmix64."""

    def __init__(self, seed: int):
        s = seed & _MASK64
        state = []
        for _ in range(4):
            s, out = _splitmix64(s)
            state.append(out)
        self.s = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def next_below(self, n: int) -> int:
        """Uniform-ish integer in [0, n) via modulo (bias < n/2^64)."""
        return self.next_u64() % n

    def sample_distinct(self, n: int, k: int) -> list[int]:
        """k distinct indices from [0, n), order-sensitive and deterministic."""
        picked: list[int] = []
        while len(picked) < k:
            c = self.next_below(n)
            if c not in picked:
                picked.append(c)
        return picked


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def iteration_rng(seed: int, iteration: int) -> Xoshiro256StarStar:
    """Independent per-iteration stream; results match the sequential run."""
    return Xoshiro256StarStar((seed + iteration * _GOLDEN) & _MASK64)


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, scaled so m[2,2] == 1 when that entry is nonzero."""

    m: np.ndarray
    inlier_count: int = 0
    inlier_ratio: float = 0.0

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)  # always copy; flags are frozen below
        if m.shape != (3, 3):
            raise RankDeficient(f"homography must be 3x3, got {m.shape}")
        if abs(m[2, 2]) > W_EPS:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise RankDeficient("homography is not invertible (|det| <= 1e-12)")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def inverse(self) -> "Homography":
        return Homography(
            np.linalg.inv(self.m),
            inlier_count=self.inlier_count,
            inlier_ratio=self.inlier_ratio,
        )

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


@dataclass(frozen=True)
class RansacConfig:
    """Fixed-budget seeded RANSAC parameters.

    inlier_tolerance_px defaults to 1.25 x the correspondence set's patch
    size when left as None.
    """

    iterations: int = 2000
    inlier_tolerance_px: float | None = None
    seed: int = 0
    min_inliers: int = 8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.inlier_tolerance_px is not None and self.inlier_tolerance_px <= 0:
            raise ValueError(f"tolerance must be > 0, got {self.inlier_tolerance_px}")
        if self.min_inliers < 4:
            raise ValueError(f"min_inliers must be >= 4, got {self.min_inliers}")

    def resolve_tolerance(self, patch_size_px: int) -> float:
        if self.inlier_tolerance_px is not None:
            return self.inlier_tolerance_px
        return DEFAULT_TOLERANCE_FACTOR * patch_size_px


def _hartley_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity transform taking centroid to origin, mean distance to sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d <= 0:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _apply_h(t: np.ndarray, pts: np.ndarray) -> np.ndarray:
    # affine similarity transforms only (w stays 1)
    return np.stack(
        [t[0, 0] * pts[:, 0] + t[0, 1] * pts[:, 1] + t[0, 2],
         t[1, 0] * pts[:, 0] + t[1, 1] * pts[:, 1] + t[1, 2]],
        axis=1,
    )


def _triple_collinear(a, b, c) -> bool:
    area2 = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    return area2 / 2.0 < COLLINEAR_AREA_EPS


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> Homography:
    """Least-squares homography from >= 4 correspondences (normalized DLT).

    For a minimal 4-point sample, any 3 collinear source points raise
    DegenerateConfiguration; larger sets rely on the rank test because grid
    inputs always contain collinear triples.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise DegenerateConfiguration(
            f"point arrays must both be (N, 2), got {src.shape} and {dst.shape}"
        )
    n = src.shape[0]
    if n < 4:
        raise InsufficientCorrespondences(f"need >= 4 pairs, got {n}")
    if n == 4:
        for drop in range(4):
            tri = [src[i] for i in range(4) if i != drop]
            if _triple_collinear(*tri):
                raise DegenerateConfiguration(
                    f"3 of the 4 source points are collinear (sample minus point {drop})"
                )

    t_src = _hartley_transform(src)
    t_dst = _hartley_transform(dst)
    sn = _apply_h(t_src, src)
    dn = _apply_h(t_dst, dst)

    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v

    _, sing, vt = np.linalg.svd(a)
    if sing[0] <= 0 or sing[-2] / sing[0] < 1e-12:
        raise RankDeficient("design matrix rank < 8; configuration is degenerate")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    try:
        return Homography(h, inlier_count=n, inlier_ratio=1.0)
    except RankDeficient as e:
        raise RankDeficient(f"DLT produced a singular homography: {e}") from e


def project(h: Homography, p: tuple[float, float]) -> tuple[float, float]:
    """Apply the homography to one point with perspective division."""
    m = h.m
    x, y = float(p[0]), float(p[1])
    u = m[0, 0] * x + m[0, 1] * y + m[0, 2]
    v = m[1, 0] * x + m[1, 1] * y + m[1, 2]
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) <= W_EPS:
        raise PointAtInfinity(f"point ({x}, {y}) maps to infinity (w = {w})")
    return (u / w, v / w)


def project_points(h: Homography, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection: returns (projected (N,2), finite-mask (N,)).

    Uses the same per-coordinate expressions as `project`, so results are
    bitwise identical to the scalar path. Points at infinity come back as
    (nan, nan) with mask False instead of raising.
    """
    m = h.m
    xs = pts[:, 0].astype(np.float64)
    ys = pts[:, 1].astype(np.float64)
    u = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    v = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    w = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    finite = np.abs(w) > W_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.stack([u / w, v / w], axis=1)
    out[~finite] = np.nan
    return out, finite


def ransac_homography(corrs: CorrespondenceSet, cfg: RansacConfig) -> Homography:
    """Best-consensus homography over seeded fixed-count RANSAC.

    Runs cfg.iterations minimal samples, scores by inliers under Euclidean
    reprojection error <= tolerance, then re-fits by DLT on the winning
    inlier set. Deterministic for a given (input, config, seed).
    """
    n = len(corrs)
    if n < 4:
        raise InsufficientCorrespondences(f"need >= 4 correspondences, got {n}")
    tol = cfg.resolve_tolerance(corrs.patch_size_px)
    tol2 = tol * tol
    src = corrs.source_xy
    dst = corrs.target_xy

    best_count = -1
    best_mask: np.ndarray | None = None
    for it in range(cfg.iterations):
        rng = iteration_rng(cfg.seed, it)
        model = _fit_minimal_sample(src, dst, n, rng)
        if model is None:
            continue
        proj, finite = project_points(model, src)
        err2 = (proj[:, 0] - dst[:, 0]) ** 2 + (proj[:, 1] - dst[:, 1]) ** 2
        inliers = finite & (err2 <= tol2)
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_mask = inliers

    if best_mask is None or best_count < cfg.min_inliers:
        raise NoConsensus(
            f"best consensus has {max(best_count, 0)} inliers, "
            f"below min_inliers {cfg.min_inliers}",
            best_inliers=max(best_count, 0),
        )

    refined = dlt_homography(src[best_mask], dst[best_mask])
    proj, finite = project_points(refined, src)
    err2 = (proj[:, 0] - dst[:, 0]) ** 2 + (proj[:, 1] - dst[:, 1]) ** 2
    final_mask = finite & (err2 <= tol2)
    count = int(final_mask.sum())
    return Homography(refined.m, inlier_count=count, inlier_ratio=count / n)


_SAMPLE_RETRIES = 32


def _fit_minimal_sample(src, dst, n, rng) -> Homography | None:
    for _ in range(_SAMPLE_RETRIES):
        idx = rng.sample_distinct(n, 4)
        try:
            return dlt_homography(src[idx], dst[idx])
        except (DegenerateConfiguration, RankDeficient):
            continue  # redraw within the iteration budget
    return None


def warp_mask(
    h: Homography, mask: np.ndarray, target_dims: tuple[int, int]
) -> np.ndarray:
    """Warp a boolean mask into a target frame by inverse nearest-neighbor mapping.

    Target pixel (x, y) is true iff projecting it through inverse(h) lands,
    after round-half-up (floor(v + 0.5)), on a true source pixel. Pixels
    whose inverse projection degenerates are false.
    """
    mask = np.asarray(mask, dtype=bool)
    w_t, h_t = target_dims
    hinv = h.inverse()
    xs, ys = np.meshgrid(np.arange(w_t, dtype=np.float64),
                         np.arange(h_t, dtype=np.float64))
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    proj, finite = project_points(hinv, pts)
    out = np.zeros(pts.shape[0], dtype=bool)
    sx = np.floor(proj[finite, 0] + 0.5)
    sy = np.floor(proj[finite, 1] + 0.5)
    h_s, w_s = mask.shape
    inb = (sx >= 0) & (sx < w_s) & (sy >= 0) & (sy < h_s)
    hits = np.zeros(int(finite.sum()), dtype=bool)
    hits[inb] = mask[sy[inb].astype(np.int64), sx[inb].astype(np.int64)]
    out[finite] = hits
    return out.reshape(h_t, w_t)
