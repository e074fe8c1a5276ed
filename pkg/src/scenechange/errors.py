"""Exception hierarchy shared across the pipeline.

Every error carries a human-readable message; errors that point at a
specific input (a byte offset, a patch index, a pair id) embed it in the
message and expose it as an attribute where useful.
"""


class SceneChangeError(Exception):
    """Base class for all errors raised by this package."""


# --- container / codec formats ---------------------------------------------

class FormatError(SceneChangeError):
    """Malformed on-disk data that is not one of the specific cases below."""


class BadMagic(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class UnsupportedDtype(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class NonFiniteValue(FormatError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class RunLengthOverflow(FormatError):
    pass


class IoFailure(SceneChangeError):
    pass


# --- matching / geometry ----------------------------------------------------

class DimMismatch(SceneChangeError):
    pass


class ZeroNormDescriptor(SceneChangeError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class IndexOutOfRange(SceneChangeError):
    pass


class DegenerateConfiguration(SceneChangeError):
    pass


class RankDeficient(SceneChangeError):
    pass


class InsufficientCorrespondences(SceneChangeError):
    pass


class NoConsensus(SceneChangeError):
    def __init__(self, message: str, best_inliers: int = 0):
        super().__init__(message)
        self.best_inliers = best_inliers


class PointAtInfinity(SceneChangeError):
    pass


# --- change refinement -------------------------------------------------------

class EmptySegment(SceneChangeError):
    pass


# --- dataset / evaluation ----------------------------------------------------

class EmptyInput(SceneChangeError):
    pass


class MissingFile(SceneChangeError):
    def __init__(self, message: str, pair_id: str | None = None, role: str | None = None):
        super().__init__(message)
        self.pair_id = pair_id
        self.role = role


class LayoutMismatch(SceneChangeError):
    pass


class MissingPrediction(SceneChangeError):
    def __init__(self, message: str, pair_ids: list[str] | None = None):
        super().__init__(message)
        self.pair_ids = pair_ids or []


class ConfigError(SceneChangeError):
    pass
