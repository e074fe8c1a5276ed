"""Command-line front end: detect, evaluate, sweep and overlay subcommands.

Exit codes: 0 on success, 2 when some pairs were skipped for lack of a
homography consensus, 1 on fatal errors. Fatal errors print one JSON object
to stderr: {"error": "<ExceptionName>", "message": "...", ...extras}.

Configuration comes from an optional JSON file (--config) overridden by
flags; the default homography cache directory comes from the
SCENECHANGE_CACHE_DIR environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .changes import ChangeParams
from .errors import (
    ConfigError,
    DimMismatch,
    EmptyInput,
    FormatError,
    IoFailure,
    MissingFile,
    MissingPrediction,
    NoConsensus,
    SceneChangeError,
)
from .evaluation import PairScore, aggregate, f1, load_dataset, score_mask, write_report
from .formats import (
    PairManifest,
    load_pair_manifest,
    read_image_rgb,
    read_mask_png,
    write_image_rgb,
    write_mask_png,
)
from .geometry import RansacConfig
from .pipeline import DetectionResult, LoadedPair, PipelineConfig, detect_pair, load_pair, sweep_pair

CACHE_ENV = "SCENECHANGE_CACHE_DIR"
OVERLAY_ALPHA = 128  # of 255
OVERLAY_TINT = (255, 0, 0)
DEFAULT_SWEEP = (0.5, 0.55, 0.6, 0.65, 0.7)

_print_lock = threading.Lock()


def _log(line: str) -> None:
    with _print_lock:
        print(line, flush=True)


# --- configuration ----------------------------------------------------------------

def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Merge config file and flags (flags win) into a validated PipelineConfig."""
    doc = _load_config_file(getattr(args, "config", None))

    def pick(flag_name: str, key: str, default):
        value = getattr(args, flag_name, None)
        if value is not None:
            return value
        return doc.get(key, default)

    cache_dir = pick("cache_dir", "cache_dir", os.environ.get(CACHE_ENV))
    try:
        change = ChangeParams(
            tau=float(pick("tau", "tau", 0.65)),
            alpha=float(pick("alpha", "alpha", 0.8)),
            beta=float(pick("beta", "beta", 0.5)),
        )
        tol = pick("inlier_tolerance_px", "inlier_tolerance_px", None)
        ransac = RansacConfig(
            iterations=int(pick("iterations", "iterations", 2000)),
            inlier_tolerance_px=None if tol is None else float(tol),
            seed=int(pick("seed", "seed", 0)),
            min_inliers=int(pick("min_inliers", "min_inliers", 8)),
        )
        return PipelineConfig(
            change=change,
            ransac=ransac,
            min_segment_area=int(pick("min_segment_area", "min_segment_area", 1)),
            mutual_matches=bool(pick("mutual", "mutual_matches", False)),
            cache_dir=None if cache_dir is None else Path(cache_dir),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _parse_taus(args: argparse.Namespace, doc_key: str = "sweep") -> tuple[float, ...]:
    spec = getattr(args, "taus", None)
    if spec is not None:
        try:
            taus = tuple(float(part) for part in spec.split(",") if part.strip())
        except ValueError as e:
            raise ConfigError(f"cannot parse --taus {spec!r}: {e}") from e
    else:
        doc = _load_config_file(getattr(args, "config", None))
        taus = tuple(float(t) for t in doc.get(doc_key, DEFAULT_SWEEP))
    if not taus:
        raise ConfigError("sweep needs at least one tau value")
    return taus


# --- input resolution -------------------------------------------------------------

def resolve_pairs(input_path: str, dataset_tag: str) -> list[PairManifest]:
    """Accept a pair manifest, a {"pairs": [...]} list file, or a dataset root."""
    path = Path(input_path)
    if path.is_dir():
        return [rec.manifest for rec in load_dataset(path, dataset_tag)]
    if not path.is_file():
        raise IoFailure(f"input not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON: {e}") from e
    if isinstance(doc, dict) and "pairs" in doc:
        entries = doc["pairs"]
        if not isinstance(entries, list):
            raise FormatError(f"{path}: 'pairs' must be a list of manifest paths")
        manifests = [load_pair_manifest(path.parent / str(entry)) for entry in entries]
    elif isinstance(doc, dict) and "pair_id" in doc:
        manifests = [load_pair_manifest(path)]
    else:
        raise FormatError(f"{path}: neither a pair manifest nor a pair list")
    if not manifests:
        raise EmptyInput("no pairs")
    return manifests


# --- detect -----------------------------------------------------------------------

def _write_detection(det: DetectionResult, params: ChangeParams, out_dir: Path) -> dict:
    mask_path = out_dir / f"{det.pair_id}.png"
    json_path = out_dir / f"{det.pair_id}.json"
    write_mask_png(det.mask, mask_path)
    json_path.write_text(json.dumps(det.to_json_dict(params), sort_keys=True, indent=2) + "\n")
    return {
        "pair_id": det.pair_id,
        "mask": mask_path.name,
        "record": json_path.name,
        "changed_pixels": int(det.mask.sum()),
        "inlier_ratio": det.inlier_ratio,
    }


def _map_pairs(fn, manifests: list[PairManifest], jobs: int):
    """Apply fn to each manifest, optionally across threads, preserving order."""
    if jobs <= 1:
        return [fn(m) for m in manifests]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, manifests))


def cmd_detect(args: argparse.Namespace) -> int:
    config = build_config(args)
    manifests = resolve_pairs(args.input, args.dataset_tag)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_one(manifest: PairManifest):
        try:
            det = detect_pair(load_pair(manifest), config)
        except NoConsensus as e:
            _log(f"pair {manifest.pair_id}: skipped ({e})")
            return {"pair_id": manifest.pair_id, "error": "NoConsensus", "message": str(e)}
        entry = _write_detection(det, config.change, out_dir)
        _log(
            f"pair {det.pair_id}: changed_px={entry['changed_pixels']} "
            f"inliers={det.inlier_count}/{det.n_correspondences}"
        )
        return entry

    rows = _map_pairs(run_one, manifests, args.jobs)
    done = sorted((r for r in rows if "error" not in r), key=lambda r: r["pair_id"])
    skipped = sorted((r for r in rows if "error" in r), key=lambda r: r["pair_id"])
    index = {"pairs": done, "skipped": skipped}
    (out_dir / "index.json").write_text(json.dumps(index, sort_keys=True, indent=2) + "\n")
    _log(f"detect: {len(done)} pairs written, {len(skipped)} skipped -> {out_dir}")
    return 2 if skipped else 0


# --- evaluate ---------------------------------------------------------------------

def _score_records(records, predictions_dir: Path) -> list[PairScore]:
    missing = [
        rec.pair_id
        for rec in records
        if not (predictions_dir / f"{rec.pair_id}.png").is_file()
    ]
    if missing:
        raise MissingPrediction(
            f"missing predictions for {len(missing)} pair(s)", pair_ids=missing
        )
    scores = []
    for rec in records:
        if rec.manifest.ground_truth is None or not rec.manifest.ground_truth.is_file():
            raise MissingFile(
                f"pair {rec.pair_id}: no ground truth mask",
                pair_id=rec.pair_id,
                role="ground_truth",
            )
        pred = read_mask_png(predictions_dir / f"{rec.pair_id}.png")
        truth = read_mask_png(rec.manifest.ground_truth)
        scores.append(PairScore(rec.pair_id, f1(score_mask(pred, truth))))
    return scores


def cmd_evaluate(args: argparse.Namespace) -> int:
    records = load_dataset(args.dataset, args.dataset_tag)
    scores = _score_records(records, Path(args.predictions))
    report = aggregate(scores)
    json_path, txt_path = write_report(report, args.output)
    _log(report.to_table())
    _log(f"evaluate: report -> {json_path} and {txt_path}")
    return 0


# --- sweep ------------------------------------------------------------------------

def cmd_sweep(args: argparse.Namespace) -> int:
    config = build_config(args)
    taus = _parse_taus(args)
    manifests = resolve_pairs(args.input, args.dataset_tag)
    out_dir = Path(args.output)
    tau_dirs = {}
    for tau in taus:
        tau_dirs[tau] = out_dir / f"tau_{tau:g}"
        tau_dirs[tau].mkdir(parents=True, exist_ok=True)

    def run_one(manifest: PairManifest):
        try:
            loaded = load_pair(manifest)
            per_tau = sweep_pair(loaded, config, taus)
        except NoConsensus as e:
            _log(f"pair {manifest.pair_id}: skipped ({e})")
            return {"pair_id": manifest.pair_id, "error": "NoConsensus", "message": str(e)}
        out = {"pair_id": manifest.pair_id, "taus": {}}
        for tau, det in per_tau.items():
            params = dataclasses.replace(config.change, tau=tau)
            entry = _write_detection(det, params, tau_dirs[tau])
            if loaded.truth_mask is not None:
                entry["counts"] = score_mask(det.mask, loaded.truth_mask)
            out["taus"][tau] = entry
        _log(f"pair {manifest.pair_id}: swept {len(taus)} thresholds")
        return out

    rows = _map_pairs(run_one, manifests, args.jobs)
    done = sorted((r for r in rows if "error" not in r), key=lambda r: r["pair_id"])
    skipped = sorted((r for r in rows if "error" in r), key=lambda r: r["pair_id"])

    table_rows = []
    for tau in taus:
        entries = [r["taus"][tau] for r in done]
        changed = sum(e["changed_pixels"] for e in entries)
        row = {"tau": tau, "pairs": len(entries), "changed_pixels": changed}
        if entries and all("counts" in e for e in entries):
            scores = [
                PairScore(r["pair_id"], f1(tuple(r["taus"][tau]["counts"])))
                for r in done
            ]
            report = aggregate(scores)
            row["micro"] = {
                "precision": report.micro.precision,
                "recall": report.micro.recall,
                "f1": report.micro.f1,
            }
            row["macro"] = {
                "precision": report.macro.precision,
                "recall": report.macro.recall,
                "f1": report.macro.f1,
            }
        table_rows.append(row)

    sweep_doc = {"taus": list(taus), "rows": table_rows, "skipped": skipped}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(json.dumps(sweep_doc, sort_keys=True, indent=2) + "\n")
    text = _sweep_table(table_rows)
    (out_dir / "sweep.txt").write_text(text + "\n")
    _log(text)
    return 2 if skipped else 0


def _sweep_table(rows: list[dict]) -> str:
    have_scores = all("micro" in r for r in rows) and rows
    header = ["tau", "pairs", "changed_px"]
    if have_scores:
        header += ["P", "R", "F1"]
    lines = [header]
    for r in rows:
        line = [f"{r['tau']:g}", str(r["pairs"]), str(r["changed_pixels"])]
        if have_scores:
            m = r["micro"]
            line += [f"{m['precision']:.4f}", f"{m['recall']:.4f}", f"{m['f1']:.4f}"]
        lines.append(line)
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
        for row in lines
    )


# --- overlay ----------------------------------------------------------------------

def blend_overlay(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Tint changed pixels red at fixed opacity; unchanged pixels pass through."""
    if mask.shape != image.shape[:2]:
        raise DimMismatch(
            f"mask {mask.shape} does not match image {image.shape[:2]}"
        )
    tint = np.array(OVERLAY_TINT, dtype=np.int64)
    src = image.astype(np.int64)
    blended = ((255 - OVERLAY_ALPHA) * src + OVERLAY_ALPHA * tint + 127) // 255
    out = image.copy()
    out[mask] = blended[mask].astype(np.uint8)
    return out


def cmd_overlay(args: argparse.Namespace) -> int:
    manifest = load_pair_manifest(args.pair)
    image_path = manifest.t1_image if args.frame == "t1" else manifest.t0_image
    if image_path is None or not Path(image_path).is_file():
        raise MissingFile(
            f"pair {manifest.pair_id}: no {args.frame} image to overlay on",
            pair_id=manifest.pair_id,
            role=f"{args.frame}_image",
        )
    mask = read_mask_png(args.mask)
    if not mask.any():
        # nothing to tint: the overlay is the input image, byte for byte
        if mask.shape != read_image_rgb(image_path).shape[:2]:
            raise DimMismatch(f"mask {mask.shape} does not match image")
        shutil.copyfile(image_path, args.output)
    else:
        image = read_image_rgb(image_path)
        write_image_rgb(blend_overlay(image, mask), args.output)
    _log(f"overlay: {args.output}")
    return 0


# --- argument parsing ----------------------------------------------------------------

def _add_param_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--tau", type=float, help="coarse change threshold (default 0.65)")
    p.add_argument("--alpha", type=float, help="segment overlap threshold (default 0.8)")
    p.add_argument("--beta", type=float, help="cross-image verification threshold (default 0.5)")
    p.add_argument("--seed", type=int, help="homography sampling seed (default 0)")
    p.add_argument("--iterations", type=int, help="sampling iterations (default 2000)")
    p.add_argument("--inlier-tolerance-px", dest="inlier_tolerance_px", type=float,
                   help="inlier reprojection tolerance; default 1.25 x patch size")
    p.add_argument("--min-inliers", dest="min_inliers", type=int,
                   help="minimum consensus size (default 8)")
    p.add_argument("--min-segment-area", dest="min_segment_area", type=int,
                   help="drop segments below this pixel area (default 1)")
    p.add_argument("--mutual", action="store_const", const=True, default=None,
                   help="keep only mutual nearest-neighbor correspondences")
    p.add_argument("--jobs", type=int, default=1, help="pairs processed concurrently")
    p.add_argument("--dataset-tag", dest="dataset_tag", default="custom",
                   help="dataset layout tag (vl-cmu-cd | tsunami | gsv | custom)")
    p.add_argument("--cache-dir", dest="cache_dir",
                   help=f"homography cache directory (default ${CACHE_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenechange",
        description="Detect scene changes between co-located image pairs "
                    "from exported patch embeddings and segment sets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="write a change mask + JSON record per pair")
    p.add_argument("input", help="pair manifest, pair-list JSON, or dataset root")
    p.add_argument("--output", required=True, help="output directory")
    _add_param_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("dataset", help="dataset root (pairs/<id>/pair.json tree)")
    p.add_argument("--predictions", required=True, help="directory of <pair_id>.png masks")
    p.add_argument("--output", required=True, help="report output directory")
    p.add_argument("--dataset-tag", dest="dataset_tag", default="custom")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="detect across several thresholds")
    p.add_argument("input", help="pair manifest, pair-list JSON, or dataset root")
    p.add_argument("--output", required=True, help="output directory (tau_* subdirs)")
    p.add_argument("--taus", help="comma-separated threshold list (default 0.5..0.7)")
    _add_param_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("overlay", help="tint a change mask over the pair image")
    p.add_argument("pair", help="pair manifest JSON")
    p.add_argument("mask", help="change mask PNG")
    p.add_argument("--output", required=True, help="output PNG path")
    p.add_argument("--frame", choices=("t0", "t1"), default="t1")
    p.set_defaults(func=cmd_overlay)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SceneChangeError as e:
        payload = {"error": type(e).__name__, "message": str(e)}
        if isinstance(e, MissingPrediction):
            payload["pair_ids"] = e.pair_ids
        if isinstance(e, NoConsensus):
            payload["best_inliers"] = e.best_inliers
        if isinstance(e, MissingFile):
            payload["pair_id"] = e.pair_id
            payload["role"] = e.role
        sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
