"""Exception hierarchy for the exporter.

Every error carries a human-readable message; errors that point at a
specific input (an image path, a backbone id, a pair id) embed it in the
message and expose it as an attribute where useful.
"""


class ExportError(Exception):
    """Base class for all errors raised by this package."""


class ModelUnavailable(ExportError):
    """Backbone or segmentation weights are not present locally.

    Weights are never fetched implicitly at inference time; the message
    names the download subcommand that provisions them.
    """

    def __init__(self, message: str, backbone: str | None = None):
        super().__init__(message)
        self.backbone = backbone


class ImageDecodeError(ExportError):
    """An input image could not be opened or decoded."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path


class LayoutMismatch(ExportError):
    """A dataset directory does not match the expected tag layout."""


class IoFailure(ExportError):
    """An output file could not be written."""
