"""Command-line entry points.

Subcommands: export (one pair), export-dataset (a pairs/ tree), download
(fetch preset weights for offline use), make-toy-backbone (tiny seeded
checkpoint for tests and demos).  Every successful run prints a one-line
machine-readable JSON summary on stdout; failures print a one-line JSON
error object on stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from scdexport.backbones import PRESETS, download_preset, make_toy_checkpoint
from scdexport.errors import ExportError
from scdexport.export import ExportJob, export_dataset, export_pair
from scdexport.segments import BACKENDS


def _parse_resize(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as e:
        raise ValueError(f"resize must look like 512x512, got {text!r}") from e


def _add_job_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--backbone",
        default="placeformer-like",
        help=f"preset ({' | '.join(sorted(PRESETS))}) or a checkpoint directory",
    )
    sub.add_argument(
        "--resize", default=None, help="inference resolution WxH (default: preset's)"
    )
    sub.add_argument(
        "--points-per-side",
        type=int,
        default=32,
        help="segmentation granularity; higher = finer (default 32)",
    )
    sub.add_argument(
        "--segmenter", default="felzenszwalb", help=f"mask backend ({' | '.join(BACKENDS)})"
    )
    sub.add_argument(
        "--sam-checkpoint", default=None, help="weights file for the sam segmenter"
    )
    sub.add_argument(
        "--max-mask-frac",
        type=float,
        default=1.0,
        help="drop segments covering more than this fraction of the canvas (default 1.0)",
    )
    sub.add_argument(
        "--min-segment-area",
        type=int,
        default=1,
        help="drop segments below this pixel area (default 1)",
    )
    sub.add_argument(
        "--dataset-tag", default="custom", help="layout tag recorded in manifests"
    )
    sub.add_argument(
        "--weights-dir", default=None, help="preset weights root (default $SCDEXPORT_WEIGHTS_DIR)"
    )


def _job_from_args(args: argparse.Namespace, t0: Path, t1: Path, out: Path) -> ExportJob:
    return ExportJob(
        t0_image=t0,
        t1_image=t1,
        out_dir=out,
        pair_id=getattr(args, "pair_id", "pair"),
        backbone=args.backbone,
        resize=_parse_resize(args.resize) if args.resize else None,
        points_per_side=args.points_per_side,
        segmenter=args.segmenter,
        sam_checkpoint=Path(args.sam_checkpoint) if args.sam_checkpoint else None,
        max_mask_frac=args.max_mask_frac,
        min_segment_area=args.min_segment_area,
        dataset_tag=args.dataset_tag,
        ground_truth=Path(args.gt) if getattr(args, "gt", None) else None,
        weights_root=Path(args.weights_dir) if args.weights_dir else None,
    )


def cmd_export(args: argparse.Namespace) -> int:
    t0, t1 = (Path(p) for p in args.images)
    job = _job_from_args(args, t0, t1, Path(args.out))
    summary = export_pair(job)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_export_dataset(args: argparse.Namespace) -> int:
    template = _job_from_args(args, Path("t0"), Path("t1"), Path(args.out))
    summary = export_dataset(args.root, args.out, template)
    summary.pop("pair_summaries")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_download(args: argparse.Namespace) -> int:
    dest = download_preset(args.preset, args.weights_dir)
    print(json.dumps({"preset": args.preset, "weights_dir": str(dest)}, sort_keys=True))
    return 0


def cmd_make_toy_backbone(args: argparse.Namespace) -> int:
    dest = make_toy_checkpoint(args.dest, seed=args.seed)
    print(json.dumps({"checkpoint_dir": str(dest), "seed": args.seed}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scdexport",
        description="export patch embeddings, segment sets, and pair manifests",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    export = subs.add_parser("export", help="export one image pair")
    export.add_argument(
        "--images", nargs=2, required=True, metavar=("T0", "T1"), help="the two epoch images"
    )
    export.add_argument("--out", required=True, help="output pair directory")
    export.add_argument("--pair-id", default="pair", help="pair id recorded in the manifest")
    export.add_argument("--gt", default=None, help="optional ground-truth mask PNG")
    _add_job_flags(export)
    export.set_defaults(func=cmd_export)

    dataset = subs.add_parser("export-dataset", help="export every pair under root/pairs/")
    dataset.add_argument("root", help="input tree: pairs/<id>/t0.png, t1.png[, gt.png]")
    dataset.add_argument("--out", required=True, help="output dataset root")
    _add_job_flags(dataset)
    dataset.set_defaults(func=cmd_export_dataset)

    download = subs.add_parser("download", help="fetch preset weights for offline use")
    download.add_argument("preset", help=f"one of {', '.join(sorted(PRESETS))}")
    download.add_argument(
        "--weights-dir", default=None, help="preset weights root (default $SCDEXPORT_WEIGHTS_DIR)"
    )
    download.set_defaults(func=cmd_download)

    toy = subs.add_parser("make-toy-backbone", help="write a tiny seeded test checkpoint")
    toy.add_argument("dest", help="directory to create")
    toy.add_argument("--seed", type=int, default=0, help="parameter seed (default 0)")
    toy.set_defaults(func=cmd_make_toy_backbone)
    return parser


def main(argv: list[str] | None = None) -> int:
    from transformers.utils import logging as hf_logging

    hf_logging.disable_progress_bar()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExportError, ValueError) as e:
        payload = {"error": type(e).__name__, "message": str(e)}
        sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
