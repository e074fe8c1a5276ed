"""Scoring, aggregation, dataset loading and report serialization tests."""

from __future__ import annotations

import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scenechange.errors import DimMismatch, EmptyInput, LayoutMismatch, MissingFile
from scenechange.evaluation import (
    EvalReport,
    PairScore,
    aggregate,
    f1,
    load_dataset,
    score_mask,
    write_report,
)
from scenechange.formats import read_mask_png
from scenechange.synthetic import make_dataset, make_pair, write_pair_dir


class TestF1:
    def test_hand_computed(self):
        s = f1((50, 25, 10))
        assert s.precision == pytest.approx(2 / 3, abs=1e-12)
        assert s.recall == pytest.approx(5 / 6, abs=1e-12)
        assert s.f1 == pytest.approx(20 / 27, abs=1e-12)
        assert (s.tp, s.fp, s.fn) == (50, 25, 10)

    def test_perfect(self):
        s = f1((10, 0, 0))
        assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)

    @pytest.mark.parametrize(
        "counts, expect",
        [
            ((0, 0, 0), (0.0, 0.0, 0.0)),  # nothing predicted, nothing true
            ((0, 5, 0), (0.0, 0.0, 0.0)),  # only false positives
            ((0, 0, 7), (0.0, 0.0, 0.0)),  # only misses
            ((0, 3, 4), (0.0, 0.0, 0.0)),  # both, still all-zero
        ],
    )
    def test_zero_denominators(self, counts, expect):
        s = f1(counts)
        assert (s.precision, s.recall, s.f1) == expect

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            f1((-1, 0, 0))

    @given(st.tuples(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6)))
    def test_matches_exact_rational_arithmetic(self, counts):
        tp, fp, fn = counts
        s = f1(counts)
        p = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        r = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f = 2 * p * r / (p + r) if p + r else Fraction(0)
        assert s.precision == pytest.approx(float(p), abs=1e-12)
        assert s.recall == pytest.approx(float(r), abs=1e-12)
        assert s.f1 == pytest.approx(float(f), abs=1e-12)
        assert 0.0 <= s.f1 <= 1.0


class TestScoreMask:
    def test_counts(self):
        pred = np.array([[True, True], [False, False]])
        truth = np.array([[True, False], [True, False]])
        assert score_mask(pred, truth) == (1, 1, 1)

    def test_returns_python_ints(self):
        counts = score_mask(np.ones((2, 2), dtype=bool), np.ones((2, 2), dtype=bool))
        assert all(type(c) is int for c in counts)

    def test_binarizes_uint8_above_127(self):
        pred = np.array([[0, 127, 128, 255]], dtype=np.uint8)
        truth = np.array([[255, 255, 255, 255]], dtype=np.uint8)
        assert score_mask(pred, truth) == (2, 0, 2)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            score_mask(np.ones((2, 2), dtype=bool), np.ones((2, 3), dtype=bool))

    def test_all_empty(self):
        z = np.zeros((4, 4), dtype=bool)
        assert score_mask(z, z) == (0, 0, 0)


class TestAggregate:
    def test_micro_pools_counts_macro_averages(self):
        pairs = [
            PairScore("a", f1((10, 0, 0))),  # P=1, R=1, F=1
            PairScore("b", f1((0, 10, 0))),  # P=0, R=0, F=0
        ]
        report = aggregate(pairs)
        # micro: tp=10, fp=10, fn=0 -> P=0.5, R=1, F=2/3
        assert report.micro.precision == pytest.approx(0.5, abs=1e-12)
        assert report.micro.recall == pytest.approx(1.0, abs=1e-12)
        assert report.micro.f1 == pytest.approx(2 / 3, abs=1e-12)
        # macro: plain means of the per-pair scores
        assert report.macro.precision == pytest.approx(0.5, abs=1e-12)
        assert report.macro.recall == pytest.approx(0.5, abs=1e-12)
        assert report.macro.f1 == pytest.approx(0.5, abs=1e-12)
        assert (report.micro.tp, report.micro.fp, report.micro.fn) == (10, 10, 0)

    def test_single_pair_micro_equals_macro_f1(self):
        report = aggregate([PairScore("only", f1((5, 3, 2)))])
        assert report.micro.f1 == pytest.approx(report.macro.f1, abs=1e-12)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            aggregate([])

    def test_preserves_pair_order(self):
        pairs = [PairScore(f"p{i}", f1((i, 1, 1))) for i in range(4)]
        report = aggregate(pairs)
        assert [p.pair_id for p in report.pairs] == ["p0", "p1", "p2", "p3"]


class TestEvalReport:
    def _report(self):
        return aggregate([
            PairScore("pair_a", f1((50, 25, 10))),
            PairScore("pair_b", f1((0, 0, 0))),
        ])

    def test_json_dict_shape(self):
        d = self._report().to_json_dict()
        assert {"pairs", "micro", "macro"} <= d.keys()
        assert d["pairs"][0]["pair_id"] == "pair_a"
        assert d["pairs"][0]["tp"] == 50
        assert d["micro"]["tp"] == 50
        assert {"precision", "recall", "f1"} <= d["macro"].keys()

    def test_json_round_trips(self):
        d = self._report().to_json_dict()
        assert json.loads(json.dumps(d)) == d

    def test_table_has_all_rows(self):
        table = self._report().to_table()
        lines = table.splitlines()
        assert any("pair_a" in ln for ln in lines)
        assert any("pair_b" in ln for ln in lines)
        assert any(ln.startswith("micro") for ln in lines)
        assert any(ln.startswith("macro") for ln in lines)
        # micro of the fixture: P=2/3, R=5/6
        micro_line = next(ln for ln in lines if ln.startswith("micro"))
        assert "0.6667" in micro_line and "0.8333" in micro_line

    def test_write_report_files(self, tmp_path):
        json_path, txt_path = write_report(self._report(), tmp_path)
        assert json_path.exists() and txt_path.exists()
        data = json.loads(json_path.read_text())
        assert data == self._report().to_json_dict()
        assert "pair_a" in txt_path.read_text()


class TestLoadDataset:
    def test_round_trip(self, tmp_path):
        make_dataset(tmp_path, n_pairs=3, seed=11)
        records = load_dataset(tmp_path)
        assert [r.pair_id for r in records] == sorted(r.pair_id for r in records)
        assert len(records) == 3
        for rec in records:
            assert rec.dataset_tag == "custom"
            assert rec.ground_truth is not None
            assert read_mask_png(rec.ground_truth).dtype == bool

    def test_missing_ground_truth_rejected(self, tmp_path):
        pair = make_pair(101)
        pair_dir = tmp_path / "pairs" / "p0"
        write_pair_dir(pair, pair_dir, pair_id="p0")
        manifest_path = pair_dir / "pair.json"
        data = json.loads(manifest_path.read_text())
        del data["ground_truth"]
        manifest_path.write_text(json.dumps(data))
        with pytest.raises(MissingFile) as exc:
            load_dataset(tmp_path)
        assert exc.value.role == "ground truth"
        assert exc.value.pair_id == "p0"

    def test_unknown_layout(self, tmp_path):
        with pytest.raises(LayoutMismatch):
            load_dataset(tmp_path, layout="imagenet")

    def test_missing_pairs_dir(self, tmp_path):
        with pytest.raises(LayoutMismatch):
            load_dataset(tmp_path)

    def test_empty_dataset(self, tmp_path):
        (tmp_path / "pairs").mkdir()
        with pytest.raises(LayoutMismatch):
            load_dataset(tmp_path)

    def test_fixed_size_layout_rejects_other_sizes(self, tmp_path):
        make_dataset(tmp_path, n_pairs=1, seed=3)  # 256x256 images
        with pytest.raises(LayoutMismatch):
            load_dataset(tmp_path, layout="vl-cmu-cd")

    def test_fixed_size_layout_accepts_512(self, tmp_path):
        pair = make_pair(5, grid_h=32, grid_w=32, patch=16)  # 512x512
        write_pair_dir(pair, tmp_path / "pairs" / "p0", pair_id="p0")
        records = load_dataset(tmp_path, layout="vl-cmu-cd")
        assert len(records) == 1
        assert records[0].dataset_tag == "vl-cmu-cd"

    def test_scores_computable_from_records(self, tmp_path):
        make_dataset(tmp_path, n_pairs=2, seed=9)
        records = load_dataset(tmp_path)
        for rec in records:
            truth = read_mask_png(rec.ground_truth)
            counts = score_mask(truth, truth)
            assert counts[1] == 0 and counts[2] == 0
