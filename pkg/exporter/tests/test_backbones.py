"""Backbone presets, loading, inference geometry, and determinism."""

from __future__ import annotations

import numpy as np
import pytest
import torch
from PIL import Image

from scdexport.backbones import (
    DEFAULT_RESIZE,
    PRESETS,
    WEIGHTS_ENV,
    Backbone,
    default_resize_for,
    load_backbone,
    make_toy_checkpoint,
    resolve_backbone,
    weights_root,
)
from scdexport.errors import ModelUnavailable
from scdexport.export import neighbor_cosine_spread

from conftest import noise_image


class TestPresets:
    def test_table_contents(self):
        assert set(PRESETS) == {
            "placeformer-like",
            "foundation-vit-small",
            "foundation-vit-base",
        }

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_default_resize_divisible_by_patch(self, name):
        preset = PRESETS[name]
        w, h = preset.default_resize
        assert w % preset.patch_size_px == 0
        assert h % preset.patch_size_px == 0

    def test_default_resize_for_unknown_backbone(self):
        assert default_resize_for("/some/checkpoint") == DEFAULT_RESIZE

    def test_default_resize_for_preset(self):
        assert default_resize_for("foundation-vit-small") == (518, 518)


class TestResolveBackbone:
    def test_preset_without_local_weights_points_at_download(self, tmp_path):
        with pytest.raises(ModelUnavailable, match="scdexport download"):
            resolve_backbone("placeformer-like", tmp_path)

    def test_preset_with_local_weights(self, tmp_path):
        (tmp_path / "placeformer-like").mkdir()
        assert resolve_backbone("placeformer-like", tmp_path) == tmp_path / "placeformer-like"

    def test_checkpoint_directory_passes_through(self, toy_backbone_dir):
        assert str(resolve_backbone(toy_backbone_dir)) == toy_backbone_dir

    def test_unknown_id_rejected(self, tmp_path):
        with pytest.raises(ModelUnavailable, match="not a preset"):
            resolve_backbone(str(tmp_path / "nope"))

    def test_weights_root_env_override(self, monkeypatch, tmp_path):
        monkeypatch.setenv(WEIGHTS_ENV, str(tmp_path))
        assert weights_root() == tmp_path
        assert weights_root(tmp_path / "explicit") == tmp_path / "explicit"

    def test_load_from_empty_directory_fails(self, tmp_path):
        with pytest.raises(ModelUnavailable, match="cannot load"):
            load_backbone(str(tmp_path))


class TestToyCheckpoint:
    def test_geometry(self, backbone):
        assert backbone.patch_size_px == 16
        assert backbone.dim == 32
        assert backbone.native_size == 128

    def test_same_seed_same_weights(self, tmp_path):
        a = Backbone.load(make_toy_checkpoint(tmp_path / "a", seed=3))
        b = Backbone.load(make_toy_checkpoint(tmp_path / "b", seed=3))
        for (ka, va), (kb, vb) in zip(
            a.model.state_dict().items(), b.model.state_dict().items()
        ):
            assert ka == kb
            assert torch.equal(va, vb), ka

    def test_different_seed_different_weights(self, tmp_path, backbone):
        other = Backbone.load(make_toy_checkpoint(tmp_path / "c", seed=4))
        state_a = backbone.model.state_dict()
        state_b = other.model.state_dict()
        assert any(
            not torch.equal(state_a[k], state_b[k])
            for k in state_a
            if state_a[k].numel() and "position" not in k
        )

    def test_position_embeddings_zeroed(self, backbone):
        pos = backbone.model.embeddings.position_embeddings
        assert torch.equal(pos, torch.zeros_like(pos))


class TestEmbed:
    def test_native_size_grid_dims(self, backbone):
        pixels = backbone.preprocess(noise_image(1), (128, 128))
        grid = backbone.embed(pixels)
        assert grid.shape == (8, 8, 32)
        assert grid.dtype == np.float32

    def test_interpolated_size_grid_dims(self, backbone):
        pixels = backbone.preprocess(noise_image(1, (512, 512)), (512, 512))
        assert backbone.embed(pixels).shape == (32, 32, 32)

    def test_same_input_bitwise_identical(self, backbone):
        img = noise_image(2)
        a = backbone.embed(backbone.preprocess(img, (128, 128)))
        b = backbone.embed(backbone.preprocess(img, (128, 128)))
        assert a.tobytes() == b.tobytes()

    def test_uniform_image_tokens_identical(self, backbone):
        gray = Image.new("RGB", (128, 128), (128, 128, 128))
        grid = backbone.embed(backbone.preprocess(gray, (128, 128)))
        assert neighbor_cosine_spread(grid) == 0.0

    def test_preprocess_range_and_layout(self, backbone):
        img = Image.new("RGB", (64, 32), (255, 0, 128))
        pixels = backbone.preprocess(img, (64, 32))
        assert pixels.shape == (1, 3, 32, 64)
        assert pixels.dtype == torch.float32
        chans = pixels[0, :, 0, 0].tolist()
        assert chans[0] == pytest.approx(1.0)
        assert chans[1] == pytest.approx(-1.0)
        assert chans[2] == pytest.approx((128 / 255 - 0.5) / 0.5, abs=1e-6)


class TestNeighborCosineSpread:
    def test_identical_tokens_zero(self):
        grid = np.ones((3, 3, 4), dtype=np.float32)
        assert neighbor_cosine_spread(grid) == 0.0

    def test_opposite_neighbors_max_out(self):
        grid = np.ones((1, 2, 4), dtype=np.float32)
        grid[0, 1] = -1.0
        assert neighbor_cosine_spread(grid) == pytest.approx(2.0)

    def test_scale_invariant(self):
        rng = np.random.default_rng(8)
        grid = rng.normal(size=(4, 4, 6))
        assert neighbor_cosine_spread(grid * 7.5) == pytest.approx(
            neighbor_cosine_spread(grid)
        )
