"""Pretrained patch-token backbones: presets, loading, and inference.

A backbone is any transformer encoder that maps an image to a grid of
patch tokens.  Three presets cover the supported model families; any
local checkpoint directory with a patch-token architecture works as a
drop-in via its path.  Weights are only ever read from local
directories — provisioning them is the download subcommand's job, never
an implicit side effect of inference.

Inference runs single-threaded on CPU in eval mode under ``no_grad`` so
exports are bitwise-deterministic for fixed weights and inputs.  Raw
tokens are exported unnormalized; descriptor normalization is the
detection pipeline's job, keeping threshold semantics backbone-independent.
"""

from __future__ import annotations

import inspect
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from transformers import AutoModel, ViTConfig, ViTModel

from scdexport.errors import ModelUnavailable

WEIGHTS_ENV = "SCDEXPORT_WEIGHTS_DIR"


@dataclass(frozen=True)
class BackbonePreset:
    """One supported pretrained encoder and its inference geometry."""

    name: str
    hf_id: str
    patch_size_px: int
    default_resize: tuple[int, int]


PRESETS: dict[str, BackbonePreset] = {
    p.name: p
    for p in (
        BackbonePreset("placeformer-like", "facebook/dino-vits16", 16, (512, 512)),
        BackbonePreset("foundation-vit-small", "facebook/dinov2-small", 14, (518, 518)),
        BackbonePreset("foundation-vit-base", "facebook/dinov2-base", 14, (518, 518)),
    )
}

DEFAULT_RESIZE = (512, 512)


def weights_root(override: str | Path | None = None) -> Path:
    """Directory holding downloaded preset weights, one subdir per preset."""
    if override is not None:
        return Path(override)
    env = os.environ.get(WEIGHTS_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "scdexport"


def resolve_backbone(backbone: str, root: str | Path | None = None) -> Path:
    """Map a backbone id (preset name or checkpoint dir) to a local directory."""
    if backbone in PRESETS:
        path = weights_root(root) / backbone
        if not path.is_dir():
            raise ModelUnavailable(
                f"backbone {backbone!r} has no local weights under {path}; "
                f"run `scdexport download {backbone}` first",
                backbone=backbone,
            )
        return path
    path = Path(backbone)
    if path.is_dir():
        return path
    raise ModelUnavailable(
        f"unknown backbone {backbone!r}: not a preset "
        f"({', '.join(sorted(PRESETS))}) and not a local checkpoint directory",
        backbone=backbone,
    )


def default_resize_for(backbone: str) -> tuple[int, int]:
    preset = PRESETS.get(backbone)
    return preset.default_resize if preset is not None else DEFAULT_RESIZE


class Backbone:
    """A loaded encoder plus the geometry needed to grid its tokens."""

    def __init__(self, model, source: str):
        torch.set_num_threads(1)
        model.eval()
        self.model = model
        self.source = source
        config = model.config
        patch = getattr(config, "patch_size", None)
        if patch is None:
            raise ModelUnavailable(
                f"checkpoint at {source} is not a patch-token encoder "
                "(its config declares no patch_size)",
                backbone=source,
            )
        self.patch_size_px = int(patch)
        self.dim = int(config.hidden_size)
        native = getattr(config, "image_size", None)
        self.native_size = int(native) if native is not None else None
        self._interpolates = (
            "interpolate_pos_encoding" in inspect.signature(model.forward).parameters
        )

    @classmethod
    def load(cls, path: str | Path) -> "Backbone":
        try:
            model = AutoModel.from_pretrained(str(path), local_files_only=True)
        except (OSError, ValueError, EnvironmentError) as e:
            raise ModelUnavailable(
                f"cannot load backbone from {path}: {e}", backbone=str(path)
            ) from e
        return cls(model, str(path))

    def preprocess(self, image: Image.Image, resize: tuple[int, int]) -> torch.Tensor:
        """Resize and normalize one RGB image to a (1, 3, H, W) input tensor."""
        resized = image.resize(resize, Image.Resampling.BILINEAR)
        arr = np.asarray(resized, dtype=np.float32) / 255.0
        arr = (arr - 0.5) / 0.5
        return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]

    def embed(self, pixels: torch.Tensor) -> np.ndarray:
        """Run the encoder and return the (H, W, d) float32 patch-token grid.

        Patch tokens sit at the tail of the sequence in every supported
        architecture, so the grid is sliced from the end; class and
        register tokens at the head are dropped.
        """
        _, _, h, w = pixels.shape
        grid_h, grid_w = h // self.patch_size_px, w // self.patch_size_px
        kwargs = {}
        if self._interpolates and (self.native_size is None or h != self.native_size or w != self.native_size):
            kwargs["interpolate_pos_encoding"] = True
        with torch.no_grad():
            out = self.model(pixel_values=pixels, **kwargs)
        tokens = out.last_hidden_state[0]
        n = grid_h * grid_w
        if tokens.shape[0] < n:
            raise ModelUnavailable(
                f"backbone at {self.source} produced {tokens.shape[0]} tokens "
                f"for a {grid_h}x{grid_w} patch grid",
                backbone=self.source,
            )
        grid = tokens[-n:].reshape(grid_h, grid_w, -1)
        return np.ascontiguousarray(grid.numpy(), dtype=np.float32)


def load_backbone(backbone: str, root: str | Path | None = None) -> Backbone:
    """Resolve a backbone id and load it from its local directory."""
    return Backbone.load(resolve_backbone(backbone, root))


def download_preset(name: str, root: str | Path | None = None) -> Path:
    """Fetch a preset's weights and store them for offline use."""
    if name not in PRESETS:
        raise ModelUnavailable(
            f"unknown preset {name!r}; choose one of {', '.join(sorted(PRESETS))}",
            backbone=name,
        )
    dest = weights_root(root) / name
    try:
        model = AutoModel.from_pretrained(PRESETS[name].hf_id)
    except Exception as e:
        raise ModelUnavailable(
            f"could not fetch weights for {name!r} ({PRESETS[name].hf_id}): {e}",
            backbone=name,
        ) from e
    dest.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(dest)
    return dest


def make_toy_checkpoint(dest: str | Path, seed: int = 0) -> Path:
    """Build a tiny seeded encoder checkpoint for tests and demos.

    One transformer layer, 32-dim tokens, patch 16 over 128x128 inputs.
    Position embeddings are zeroed so patches with identical pixels map
    to identical tokens, which makes smoothness checks exact.
    """
    config = ViTConfig(
        image_size=128,
        patch_size=16,
        num_channels=3,
        hidden_size=32,
        num_hidden_layers=1,
        num_attention_heads=4,
        intermediate_size=64,
    )
    torch.manual_seed(seed)
    model = ViTModel(config)
    with torch.no_grad():
        model.embeddings.position_embeddings.zero_()
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(dest)
    return dest
