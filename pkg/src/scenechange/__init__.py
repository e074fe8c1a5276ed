"""Zero-shot scene change detection over exported patch embeddings and segments."""

from .changes import (
    ChangeParams,
    ChangeResult,
    CoarseChangeMap,
    SegmentContribution,
    coarse_change_map,
    overlap_ratio,
    rasterize_coarse,
    refine_changes,
    threshold_coarse,
)
from .errors import (
    BadMagic,
    ConfigError,
    DegenerateConfiguration,
    DimMismatch,
    EmptyInput,
    EmptySegment,
    FormatError,
    IndexOutOfRange,
    InsufficientCorrespondences,
    IoFailure,
    LayoutMismatch,
    MissingFile,
    MissingPrediction,
    NoConsensus,
    NonFiniteValue,
    PointAtInfinity,
    RankDeficient,
    RunLengthOverflow,
    SceneChangeError,
    TruncatedPayload,
    UnsupportedDtype,
    UnsupportedVersion,
    ZeroNormDescriptor,
)
from .evaluation import (
    EvalReport,
    PairRecord,
    PairScore,
    Scores,
    aggregate,
    f1,
    load_dataset,
    score_mask,
    write_report,
)
from .formats import (
    PairManifest,
    PatchEmbeddingGrid,
    Segment,
    SegmentSet,
    decode_rle,
    encode_rle,
    load_pair_manifest,
    load_segments,
    read_array,
    read_image_rgb,
    read_mask_png,
    read_tensor,
    save_pair_manifest,
    save_segments,
    segment_from_mask,
    write_array,
    write_image_rgb,
    write_mask_png,
    write_tensor,
)
from .geometry import (
    Homography,
    RansacConfig,
    Xoshiro256StarStar,
    dlt_homography,
    iteration_rng,
    project,
    project_points,
    ransac_homography,
    warp_mask,
)
from .matching import (
    CorrespondenceSet,
    SimilarityMatrix,
    match_patches,
    patch_center,
    similarity_matrix,
)
from .pipeline import (
    DetectionResult,
    LoadedPair,
    PipelineConfig,
    detect_pair,
    estimate_homography,
    load_pair,
    sweep_pair,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # formats
    "PatchEmbeddingGrid", "Segment", "SegmentSet", "PairManifest",
    "encode_rle", "decode_rle", "segment_from_mask",
    "write_array", "read_array", "write_tensor", "read_tensor",
    "save_segments", "load_segments", "save_pair_manifest", "load_pair_manifest",
    "write_mask_png", "read_mask_png", "read_image_rgb", "write_image_rgb",
    # matching
    "SimilarityMatrix", "CorrespondenceSet",
    "similarity_matrix", "match_patches", "patch_center",
    # geometry
    "Homography", "RansacConfig", "Xoshiro256StarStar",
    "dlt_homography", "ransac_homography", "project", "project_points",
    "warp_mask", "iteration_rng",
    # changes
    "ChangeParams", "CoarseChangeMap", "ChangeResult", "SegmentContribution",
    "coarse_change_map", "threshold_coarse", "rasterize_coarse",
    "overlap_ratio", "refine_changes",
    # evaluation
    "Scores", "PairScore", "EvalReport", "PairRecord",
    "score_mask", "f1", "aggregate", "load_dataset", "write_report",
    # pipeline
    "PipelineConfig", "LoadedPair", "DetectionResult",
    "load_pair", "detect_pair", "sweep_pair", "estimate_homography",
    # errors
    "SceneChangeError", "FormatError", "BadMagic", "UnsupportedVersion",
    "UnsupportedDtype", "TruncatedPayload", "NonFiniteValue", "RunLengthOverflow",
    "IoFailure", "DimMismatch", "ZeroNormDescriptor", "IndexOutOfRange",
    "DegenerateConfiguration", "RankDeficient", "InsufficientCorrespondences",
    "NoConsensus", "PointAtInfinity", "EmptySegment", "EmptyInput",
    "MissingFile", "LayoutMismatch", "MissingPrediction", "ConfigError",
]
