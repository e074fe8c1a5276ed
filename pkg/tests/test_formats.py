"""Container, RLE, segment and manifest format tests."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scenechange.errors import (
    BadMagic,
    DimMismatch,
    FormatError,
    IoFailure,
    NonFiniteValue,
    RunLengthOverflow,
    TruncatedPayload,
    UnsupportedDtype,
    UnsupportedVersion,
)
from scenechange.formats import (
    PairManifest,
    PatchEmbeddingGrid,
    Segment,
    SegmentSet,
    decode_rle,
    encode_rle,
    load_pair_manifest,
    load_segments,
    read_array,
    read_mask_png,
    read_tensor,
    save_pair_manifest,
    save_segments,
    segment_from_mask,
    write_array,
    write_mask_png,
    write_tensor,
)

from conftest import make_grid


# --- ZSTF container ---------------------------------------------------------------

class TestZstf:
    def test_round_trip_exact(self, tmp_path, rng):
        arr = rng.normal(size=(3, 4, 5)).astype(np.float32)
        path = tmp_path / "a.zstf"
        write_array(arr, path)
        back = read_array(path)
        assert back.dtype == np.float32
        assert back.shape == (3, 4, 5)
        assert back.tobytes() == arr.tobytes()

    @given(
        arrays(
            np.float32,
            st.lists(st.integers(1, 5), min_size=1, max_size=4).map(tuple),
            elements=st.floats(-1e6, 1e6, width=32),
        )
    )
    def test_round_trip_property(self, tmp_path_factory, arr):
        path = tmp_path_factory.mktemp("zstf") / "t.zstf"
        write_array(arr, path)
        assert read_array(path).tobytes() == np.ascontiguousarray(arr).tobytes()

    def test_header_layout(self, tmp_path):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        path = tmp_path / "h.zstf"
        write_array(arr, path)
        blob = path.read_bytes()
        magic, version, ndim = struct.unpack_from("<4sII", blob, 0)
        assert magic == b"ZSTF" and version == 1 and ndim == 2
        assert struct.unpack_from("<2I", blob, 12) == (2, 3)
        (dtype_code,) = struct.unpack_from("<I", blob, 20)
        assert dtype_code == 1
        assert blob[24:] == arr.astype("<f4").tobytes()

    def _mutate(self, path, offset, payload):
        blob = bytearray(path.read_bytes())
        blob[offset:offset + len(payload)] = payload
        path.write_bytes(bytes(blob))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.zstf"
        write_array(np.ones((2, 2), np.float32), path)
        self._mutate(path, 0, b"NOPE")
        with pytest.raises(BadMagic, match="offset 0"):
            read_array(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v9.zstf"
        write_array(np.ones((2, 2), np.float32), path)
        self._mutate(path, 4, struct.pack("<I", 9))
        with pytest.raises(UnsupportedVersion, match="version 9"):
            read_array(path)

    def test_unsupported_dtype(self, tmp_path):
        path = tmp_path / "dt.zstf"
        write_array(np.ones((2, 2), np.float32), path)
        self._mutate(path, 20, struct.pack("<I", 7))
        with pytest.raises(UnsupportedDtype, match="dtype code 7"):
            read_array(path)

    def test_truncated_payload_short(self, tmp_path):
        path = tmp_path / "short.zstf"
        write_array(np.ones((2, 2), np.float32), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(TruncatedPayload, match="short"):
            read_array(path)

    def test_truncated_payload_long(self, tmp_path):
        path = tmp_path / "long.zstf"
        write_array(np.ones((2, 2), np.float32), path)
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(TruncatedPayload, match="long"):
            read_array(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "hdr.zstf"
        write_array(np.ones((2, 2), np.float32), path)
        path.write_bytes(path.read_bytes()[:9])
        with pytest.raises(TruncatedPayload):
            read_array(path)

    def test_non_finite_reports_byte_offset(self, tmp_path):
        arr = np.ones((2, 3), np.float32)
        path = tmp_path / "nan.zstf"
        write_array(arr, path)
        # payload starts after 4+4+4 + 2*4 + 4 = 24 bytes; poison element 4
        self._mutate(path, 24 + 4 * 4, struct.pack("<f", np.nan))
        with pytest.raises(NonFiniteValue) as exc:
            read_array(path)
        assert exc.value.offset == 24 + 4 * 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoFailure):
            read_array(tmp_path / "absent.zstf")


class TestTensor:
    def test_grid_round_trip(self, tmp_path, rng):
        grid = make_grid(rng, height=3, width=5, dim=4, patch=16)
        path = tmp_path / "g.zstf"
        write_tensor(grid, path)
        assert (tmp_path / "g.zstf.json").exists()
        back = read_tensor(path)
        assert back == grid

    def test_explicit_geometry_overrides_sidecar(self, tmp_path, rng):
        grid = make_grid(rng, height=3, width=3, dim=4, patch=8)
        path = tmp_path / "g.zstf"
        write_tensor(grid, path)
        back = read_tensor(path, patch_size_px=10, image_size=(30, 30))
        assert back.patch_size_px == 10
        assert (back.image_width_px, back.image_height_px) == (30, 30)

    def test_missing_sidecar(self, tmp_path, rng):
        grid = make_grid(rng)
        path = tmp_path / "g.zstf"
        write_tensor(grid, path)
        (tmp_path / "g.zstf.json").unlink()
        with pytest.raises(FormatError, match="sidecar"):
            read_tensor(path)

    def test_rank_mismatch(self, tmp_path):
        path = tmp_path / "r2.zstf"
        write_array(np.ones((4, 4), np.float32), path)
        with pytest.raises(FormatError, match="rank-3"):
            read_tensor(path, patch_size_px=8, image_size=(32, 32))


class TestPatchEmbeddingGrid:
    def test_validates_shape(self, rng):
        with pytest.raises(FormatError, match="shape"):
            PatchEmbeddingGrid(
                height=2, width=2, dim=3,
                data=rng.normal(size=(2, 2, 4)).astype(np.float32),
                patch_size_px=8, image_height_px=16, image_width_px=16,
            )

    def test_rejects_non_float32(self):
        with pytest.raises(FormatError, match="float32"):
            PatchEmbeddingGrid(
                height=2, width=2, dim=2,
                data=np.ones((2, 2, 2), np.float64),
                patch_size_px=8, image_height_px=16, image_width_px=16,
            )

    def test_rejects_non_finite(self):
        data = np.ones((2, 2, 2), np.float32)
        data[1, 1, 0] = np.inf
        with pytest.raises(NonFiniteValue):
            PatchEmbeddingGrid(
                height=2, width=2, dim=2, data=data,
                patch_size_px=8, image_height_px=16, image_width_px=16,
            )

    def test_grid_must_cover_image(self):
        # 2 patches x 8 px = 16 px of coverage cannot serve a 33 px image
        with pytest.raises(FormatError, match="covers only"):
            PatchEmbeddingGrid(
                height=2, width=2, dim=2,
                data=np.ones((2, 2, 2), np.float32),
                patch_size_px=8, image_height_px=16, image_width_px=33,
            )

    def test_grid_full_patch_overhang_rejected(self):
        # 3 patches x 8 px = 24 overhangs a 16 px image by a whole patch
        with pytest.raises(FormatError, match="overhangs"):
            PatchEmbeddingGrid(
                height=3, width=2, dim=2,
                data=np.ones((3, 2, 2), np.float32),
                patch_size_px=8, image_height_px=16, image_width_px=16,
            )

    def test_partial_edge_patch_allowed(self):
        # 3 patches x 8 px = 24 covers a 17..24 px wide image
        grid = make_grid(np.random.default_rng(0), height=2, width=3, dim=2, patch=8)
        clipped = PatchEmbeddingGrid(
            height=2, width=3, dim=2, data=grid.data.copy(),
            patch_size_px=8, image_height_px=16, image_width_px=17,
        )
        assert clipped.image_width_px == 17

    def test_descriptor_flat_indexing(self, rng):
        grid = make_grid(rng, height=2, width=3, dim=4)
        assert np.array_equal(grid.descriptor(4), grid.data[1, 1])


# --- RLE codec --------------------------------------------------------------------

def _segment_for(mask: np.ndarray, seg_id: int = 1) -> Segment:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    return Segment(
        id=seg_id, bbox=(0, 0, w, h), rle=tuple(encode_rle(mask)),
        area=int(mask.sum()),
    )


class TestRle:
    def test_zero_run_first(self):
        mask = np.array([[1, 1, 0], [0, 0, 1]], dtype=bool)
        assert encode_rle(mask) == [0, 2, 3, 1]

    def test_leading_zeros(self):
        mask = np.array([[0, 0, 1, 1]], dtype=bool)
        assert encode_rle(mask) == [2, 2]

    @given(
        arrays(
            bool,
            st.tuples(st.integers(1, 12), st.integers(1, 12)),
            elements=st.booleans(),
        )
    )
    def test_round_trip(self, mask):
        seg = _segment_for(mask)
        assert np.array_equal(decode_rle(seg), mask)

    @given(
        arrays(
            bool,
            st.tuples(st.integers(1, 12), st.integers(1, 12)),
            elements=st.booleans(),
        )
    )
    def test_runs_sum_to_extent(self, mask):
        runs = encode_rle(mask)
        assert sum(runs) == mask.size
        assert all(r >= 0 for r in runs)
        # only the leading zero-run may be zero-length
        assert all(r > 0 for r in runs[1:])

    def test_overflow(self):
        with pytest.raises(RunLengthOverflow):
            Segment(id=1, bbox=(0, 0, 2, 2), rle=(0, 5), area=5)

    def test_short_runs(self):
        with pytest.raises(FormatError, match="short"):
            Segment(id=1, bbox=(0, 0, 2, 2), rle=(0, 3), area=3)

    def test_negative_run(self):
        with pytest.raises(FormatError, match="negative"):
            Segment(id=1, bbox=(0, 0, 2, 2), rle=(-1, 5), area=4)


class TestSegment:
    def test_area_must_match_rle(self):
        with pytest.raises(FormatError, match="area"):
            Segment(id=1, bbox=(0, 0, 2, 2), rle=(0, 4), area=3)

    def test_full_mask_placement(self):
        seg = Segment(id=1, bbox=(2, 1, 2, 2), rle=(0, 4), area=4)
        full = seg.full_mask((6, 4))
        expect = np.zeros((4, 6), dtype=bool)
        expect[1:3, 2:4] = True
        assert np.array_equal(full, expect)

    def test_full_mask_bounds(self):
        seg = Segment(id=1, bbox=(2, 1, 2, 2), rle=(0, 4), area=4)
        with pytest.raises(FormatError, match="exceeds"):
            seg.full_mask((3, 4))

    def test_empty_bbox_rejected(self):
        with pytest.raises(FormatError, match="extent"):
            Segment(id=1, bbox=(0, 0, 0, 2), rle=(), area=0)

    def test_from_mask_tight_bbox(self):
        canvas = np.zeros((8, 8), dtype=bool)
        canvas[2:5, 3:6] = True
        canvas[3, 4] = False
        seg = segment_from_mask(7, canvas)
        assert seg.id == 7
        assert seg.bbox == (3, 2, 3, 3)
        assert seg.area == 8
        assert np.array_equal(seg.full_mask((8, 8)), canvas)

    def test_from_empty_mask(self):
        with pytest.raises(FormatError, match="empty"):
            segment_from_mask(1, np.zeros((4, 4), dtype=bool))


class TestSegmentSet:
    def _seg(self, seg_id, x=0, y=0):
        return Segment(id=seg_id, bbox=(x, y, 2, 2), rle=(0, 4), area=4)

    def test_duplicate_ids(self):
        with pytest.raises(FormatError, match="duplicate"):
            SegmentSet("T0", (self._seg(1), self._seg(1, x=4)))

    def test_bad_tag(self):
        with pytest.raises(FormatError, match="image_tag"):
            SegmentSet("t2", (self._seg(1),))

    def test_bounds_check_with_image_size(self):
        with pytest.raises(FormatError, match="exceeds"):
            SegmentSet("T0", (self._seg(1, x=7),), image_size=(8, 8))

    def test_union_of_overlapping_segments(self):
        a = Segment(id=1, bbox=(0, 0, 3, 3), rle=(0, 9), area=9)
        b = Segment(id=2, bbox=(2, 2, 3, 3), rle=(0, 9), area=9)
        union = SegmentSet("T1", (a, b)).union_mask((6, 6))
        assert int(union.sum()) == 9 + 9 - 1

    def test_filtered(self):
        small = Segment(id=1, bbox=(0, 0, 1, 1), rle=(0, 1), area=1)
        big = Segment(id=2, bbox=(2, 2, 3, 3), rle=(0, 9), area=9)
        segs = SegmentSet("T0", (small, big))
        kept = segs.filtered(5)
        assert [s.id for s in kept.segments] == [2]
        assert segs.filtered(0) is segs

    def test_json_round_trip(self, tmp_path):
        a = Segment(id=3, bbox=(1, 0, 3, 2), rle=(1, 4, 1), area=4)
        b = Segment(id=9, bbox=(0, 0, 2, 2), rle=(0, 4), area=4)
        original = SegmentSet("T1", (a, b))
        path = tmp_path / "segs.json"
        save_segments(original, path)
        back = load_segments(path)
        assert back.image_tag == "T1"
        assert [(s.id, s.bbox, s.rle, s.area) for s in back.segments] == [
            (s.id, s.bbox, s.rle, s.area) for s in original.segments
        ]

    def test_load_rejects_missing_keys(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"segments": [{"id": 1}]}))
        with pytest.raises(FormatError, match="missing key"):
            load_segments(path)


# --- mask PNG ----------------------------------------------------------------------

class TestMaskPng:
    def test_round_trip(self, tmp_path, rng):
        mask = rng.random((16, 24)) > 0.5
        path = tmp_path / "m.png"
        write_mask_png(mask, path)
        assert np.array_equal(read_mask_png(path), mask)

    def test_binarizes_at_128(self, tmp_path):
        from PIL import Image

        gray = np.array([[0, 127, 128, 255]], dtype=np.uint8)
        path = tmp_path / "g.png"
        Image.fromarray(gray, mode="L").save(path)
        assert read_mask_png(path).tolist() == [[False, False, True, True]]

    def test_empty_mask_rejected(self, tmp_path):
        with pytest.raises(FormatError):
            write_mask_png(np.zeros((0, 4), dtype=bool), tmp_path / "e.png")


# --- pair manifest -------------------------------------------------------------------

class TestPairManifest:
    def test_round_trip_with_optionals(self, tmp_path):
        manifest = PairManifest(
            pair_id="p1", patch_size_px=16,
            image_width_px=64, image_height_px=64,
            t0_embeddings=tmp_path / "e0.zstf", t0_segments=tmp_path / "s0.json",
            t1_embeddings=tmp_path / "e1.zstf", t1_segments=tmp_path / "s1.json",
            ground_truth=tmp_path / "gt.png", base_dir=tmp_path,
        )
        path = tmp_path / "pair.json"
        save_pair_manifest(manifest, path)
        back = load_pair_manifest(path)
        assert back.pair_id == "p1"
        assert back.patch_size_px == 16
        assert back.image_size == (64, 64)
        assert back.t0_embeddings == tmp_path / "e0.zstf"
        assert back.ground_truth == tmp_path / "gt.png"
        assert back.t0_image is None

    def test_relative_paths_resolve_against_manifest_dir(self, tmp_path):
        doc = {
            "pair_id": "x", "patch_size_px": 8,
            "image_width_px": 32, "image_height_px": 32,
            "t0": {"embeddings": "a.zstf", "segments": "a.json"},
            "t1": {"embeddings": "b.zstf", "segments": "b.json"},
        }
        sub = tmp_path / "nested"
        sub.mkdir()
        path = sub / "pair.json"
        path.write_text(json.dumps(doc))
        back = load_pair_manifest(path)
        assert back.t0_embeddings == sub / "a.zstf"

    def test_missing_key(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"pair_id": "x"}))
        with pytest.raises(FormatError, match="missing key"):
            load_pair_manifest(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(FormatError, match="JSON"):
            load_pair_manifest(path)
