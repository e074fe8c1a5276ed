"""Benchmark loading and pixel-level precision/recall/F1 scoring.

Dataset layout contract (exported trees, all tags):

    <root>/pairs/<pair_id>/pair.json   one manifest per pair, see formats.py

Pairs are returned in lexicographic pair_id order. Tags adjust validation
only: "vl-cmu-cd" requires 512x512 images; "tsunami", "gsv" and "custom"
accept any size. Ground-truth masks binarize at > 127.

Zero-denominator conventions: P (or R) is 0 when its denominator is 0, and
F1 is 0 when P + R == 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyInput, LayoutMismatch, MissingFile
from .formats import PairManifest, load_pair_manifest

DATASET_TAGS = ("vl-cmu-cd", "tsunami", "gsv", "custom")


@dataclass(frozen=True)
class PairRecord:
    """Resolved file paths for one benchmark pair."""

    pair_id: str
    dataset_tag: str
    manifest: PairManifest

    @property
    def ground_truth(self) -> Path:
        return self.manifest.ground_truth


@dataclass(frozen=True)
class Scores:
    """Confusion counts and derived fractions for one pair or an aggregate."""

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class PairScore:
    pair_id: str
    scores: Scores


@dataclass(frozen=True)
class EvalReport:
    pairs: tuple[PairScore, ...]
    micro: Scores
    macro: Scores

    def to_json_dict(self) -> dict:
        def row(s: Scores) -> dict:
            return {
                "tp": s.tp, "fp": s.fp, "fn": s.fn,
                "precision": s.precision, "recall": s.recall, "f1": s.f1,
            }

        return {
            "pairs": [{"pair_id": p.pair_id, **row(p.scores)} for p in self.pairs],
            "micro": row(self.micro),
            "macro": {
                "precision": self.macro.precision,
                "recall": self.macro.recall,
                "f1": self.macro.f1,
            },
        }

    def to_table(self) -> str:
        header = ("pair_id", "TP", "FP", "FN", "P", "R", "F1")
        rows = [header]
        for p in self.pairs:
            s = p.scores
            rows.append((p.pair_id, str(s.tp), str(s.fp), str(s.fn),
                         f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}"))
        m = self.micro
        rows.append(("micro", str(m.tp), str(m.fp), str(m.fn),
                     f"{m.precision:.4f}", f"{m.recall:.4f}", f"{m.f1:.4f}"))
        rows.append(("macro", "-", "-", "-",
                     f"{self.macro.precision:.4f}", f"{self.macro.recall:.4f}",
                     f"{self.macro.f1:.4f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
                 for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


def score_mask(pred: np.ndarray, truth: np.ndarray) -> tuple[int, int, int]:
    """Pixelwise confusion counts (TP, FP, FN); 8-bit truth binarizes at > 127."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimMismatch(f"mask dims differ: {pred.shape} vs {truth.shape}")
    pred = pred > 127 if pred.dtype != bool else pred
    truth = truth > 127 if truth.dtype != bool else truth
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    return tp, fp, fn


def f1(counts: tuple[int, int, int]) -> Scores:
    """Precision, recall and their harmonic mean from confusion counts."""
    tp, fp, fn = counts
    if tp < 0 or fp < 0 or fn < 0:
        raise ValueError(f"counts must be nonnegative, got {counts}")
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return Scores(tp=tp, fp=fp, fn=fn, precision=p, recall=r, f1=f)


def aggregate(reports: list[PairScore]) -> EvalReport:
    """Micro-average (summed counts) with macro (per-pair means) alongside."""
    if not reports:
        raise EmptyInput("no pair scores to aggregate")
    tp = sum(p.scores.tp for p in reports)
    fp = sum(p.scores.fp for p in reports)
    fn = sum(p.scores.fn for p in reports)
    micro = f1((tp, fp, fn))
    k = len(reports)
    macro = Scores(
        tp=tp, fp=fp, fn=fn,
        precision=sum(p.scores.precision for p in reports) / k,
        recall=sum(p.scores.recall for p in reports) / k,
        f1=sum(p.scores.f1 for p in reports) / k,
    )
    return EvalReport(pairs=tuple(reports), micro=micro, macro=macro)


def load_dataset(root: str | Path, layout: str = "custom") -> list[PairRecord]:
    """Walk an exported dataset tree into validated, ordered pair records."""
    root = Path(root)
    if layout not in DATASET_TAGS:
        raise LayoutMismatch(f"unknown dataset tag {layout!r}, expected one of {DATASET_TAGS}")
    pairs_dir = root / "pairs"
    if not pairs_dir.is_dir():
        raise LayoutMismatch(f"{root}: no pairs/ directory (expected exported tree)")
    manifest_paths = sorted(pairs_dir.glob("*/pair.json"))
    if not manifest_paths:
        raise LayoutMismatch(f"{root}: pairs/ holds no pair.json manifests")
    records = []
    for mpath in manifest_paths:
        manifest = load_pair_manifest(mpath)
        pid = manifest.pair_id
        roles = {
            "t0 embeddings": manifest.t0_embeddings,
            "t0 segments": manifest.t0_segments,
            "t1 embeddings": manifest.t1_embeddings,
            "t1 segments": manifest.t1_segments,
            "ground truth": manifest.ground_truth,
            "t0 image": manifest.t0_image,
            "t1 image": manifest.t1_image,
        }
        for role, path in roles.items():
            if role in ("t0 image", "t1 image") and path is None:
                continue  # images are optional for scoring
            if path is None or not Path(path).exists():
                raise MissingFile(
                    f"pair {pid}: {role} missing ({path})", pair_id=pid, role=role
                )
        if layout == "vl-cmu-cd" and manifest.image_size != (512, 512):
            raise LayoutMismatch(
                f"pair {pid}: vl-cmu-cd images must be 512x512, "
                f"got {manifest.image_width_px}x{manifest.image_height_px}"
            )
        records.append(PairRecord(pair_id=pid, dataset_tag=layout, manifest=manifest))
    records.sort(key=lambda r: r.pair_id)
    return records


def write_report(report: EvalReport, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    txt_path = out_dir / "report.txt"
    json_path.write_text(json.dumps(report.to_json_dict(), sort_keys=True, indent=1) + "\n")
    txt_path.write_text(report.to_table() + "\n")
    return json_path, txt_path
