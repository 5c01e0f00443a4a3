"""Command line surface: single fusion, batch grid runs, metric scoring.

Exit codes: 0 success, 1 pipeline/runtime failure, 2 flag misuse.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .backbone import default_descriptor, descriptor_from_json, load_backbone
from .core import NORM_KINDS, VALID_BLOCKS, FusionConfig, ImagePair, \
    load_image, save_image
from .errors import FusezcaError
from .fusion import fuse_pair
from .metrics import METRIC_COLUMNS, compute_report
from .weights import dump_map_png

_DEFAULT_BLOCK = {"resnet50": "conv5", "resnet101": "conv5",
                  "vgg19": "relu4_1"}
_TABLE_BLOCKS = {"resnet50": ("conv2", "conv3", "conv4", "conv5"),
                 "resnet101": ("conv2", "conv3", "conv4", "conv5"),
                 "vgg19": ("relu1_1", "relu2_1", "relu3_1", "relu4_1")}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusezca",
        description="Infrared/visible image fusion from ZCA-whitened deep "
                    "features, plus fusion-quality metrics.")
    sub = parser.add_subparsers(dest="command", required=True)

    fuse = sub.add_parser("fuse", help="fuse one infrared/visible pair")
    fuse.add_argument("--ir", required=True, help="infrared image path")
    fuse.add_argument("--vis", required=True, help="visible image path")
    fuse.add_argument("--out", required=True, help="fused PNG output path")
    _add_model_flags(fuse)
    fuse.add_argument("--backbone", default="resnet50",
                      choices=sorted(VALID_BLOCKS))
    fuse.add_argument("--block", default=None,
                      help="backbone block (default: deepest block)")
    fuse.add_argument("--norm", default="l1", choices=NORM_KINDS)
    fuse.add_argument("--no-zca", action="store_true",
                      help="skip the whitening stage")
    fuse.add_argument("--t", type=int, default=2, help="window radius")
    fuse.add_argument("--epsilon", type=float, default=1e-5)
    fuse.add_argument("--dump-weights", metavar="DIR", default=None,
                      help="also write the two weight maps as PNGs")
    fuse.set_defaults(func=run_fuse, parser=fuse)

    batch = sub.add_parser(
        "batch", help="fuse and score a dataset over a configuration grid")
    batch.add_argument("--dataset", required=True,
                       help="directory of <id>_ir.png / <id>_vis.png pairs")
    batch.add_argument("--out", required=True, help="output directory")
    batch.add_argument("--manifest", default=None,
                       help="JSON manifest listing explicit pairs instead "
                            "of filename pairing")
    _add_model_flags(batch)
    batch.add_argument("--backbones", default="resnet50",
                       help="comma list of backbones")
    batch.add_argument("--blocks", default=None,
                       help="comma list of blocks (default: the per-"
                            "backbone evaluation blocks)")
    batch.add_argument("--norms", default="l1,l2,nuclear",
                       help="comma list of norms")
    batch.add_argument("--zca", default="both", choices=("on", "off", "both"))
    batch.add_argument("--t", type=int, default=2)
    batch.add_argument("--epsilon", type=float, default=1e-5)
    batch.add_argument("--no-metrics", action="store_true",
                       help="write fused images only, no results.csv")
    batch.add_argument("--workers", type=int, default=1,
                       help="parallel pair workers (one session each)")
    batch.set_defaults(func=run_batch, parser=batch)

    met = sub.add_parser("metrics", help="score one fused image")
    met.add_argument("--fused", required=True)
    met.add_argument("--ir", required=True)
    met.add_argument("--vis", required=True)
    met.add_argument("--only", default=None,
                     help="comma list of metric columns to compute")
    met.set_defaults(func=run_metrics, parser=met)

    return parser


def _add_model_flags(sub):
    sub.add_argument("--model-dir", default=None,
                     help="directory of ONNX models (default: "
                          "$FUSEZCA_MODEL_DIR or ./models)")
    sub.add_argument("--descriptor", default=None,
                     help="custom backbone descriptor JSON")
    sub.add_argument("--engine", default="auto",
                     choices=("auto", "onnxruntime", "numpy"))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as e:
        return int(e.code or 0)
    except FusezcaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _make_config(parser, backbone, block, norm, zca, t, epsilon):
    if block is None:
        block = _DEFAULT_BLOCK[backbone]
    if block not in VALID_BLOCKS[backbone]:
        parser.error(f"invalid block '{block}' for backbone '{backbone}'")
    try:
        return FusionConfig(backbone_id=backbone, block_id=block,
                            norm_kind=norm, zca_enabled=zca,
                            window_radius=t, epsilon=epsilon)
    except FusezcaError as e:
        parser.error(str(e))


def _open_session(args, backbone):
    if args.descriptor is not None:
        desc = descriptor_from_json(args.descriptor, args.model_dir)
        if desc.backbone_id != backbone:
            raise FusezcaError(
                f"descriptor is for '{desc.backbone_id}', not '{backbone}'")
    else:
        desc = default_descriptor(backbone, args.model_dir)
    return load_backbone(desc, engine=args.engine)


def run_fuse(args) -> int:
    cfg = _make_config(args.parser, args.backbone, args.block, args.norm,
                       not args.no_zca, args.t, args.epsilon)
    pair = ImagePair(load_image(args.ir), load_image(args.vis))
    session = _open_session(args, cfg.backbone_id)
    result = fuse_pair(pair, cfg, session)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(result.fused, out)
    if args.dump_weights:
        wdir = Path(args.dump_weights)
        wdir.mkdir(parents=True, exist_ok=True)
        dump_map_png(result.weight_maps[0], wdir / f"{out.stem}_w_ir.png")
        dump_map_png(result.weight_maps[1], wdir / f"{out.stem}_w_vis.png")
    for stage, seconds in result.timings.items():
        print(f"{stage:12s} {seconds:8.3f} s")
    print(f"wrote {out}")
    return 0


def run_metrics(args) -> int:
    fused = load_image(args.fused)
    pair = ImagePair(load_image(args.ir), load_image(args.vis))
    only = _split(args.only) if args.only else None
    if only:
        bad = [c for c in only if c not in METRIC_COLUMNS]
        if bad:
            args.parser.error(f"unknown metrics: {', '.join(bad)}")
    report = compute_report(fused, pair, only=only)
    columns = tuple(only) if only else METRIC_COLUMNS
    writer = csv.writer(sys.stdout)
    writer.writerow(columns)
    writer.writerow(report.csv_row(columns))
    return 0


def _split(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _discover_pairs(args) -> list[tuple[str, Path, Path]]:
    dataset = Path(args.dataset)
    if args.manifest:
        spec = json.loads(Path(args.manifest).read_text("utf-8"))
        base = Path(args.manifest).parent
        pairs = [(str(p["id"]), base / p["ir"], base / p["vis"])
                 for p in spec["pairs"]]
    else:
        pairs = []
        for ir_path in sorted(dataset.glob("*_ir.png")):
            pair_id = ir_path.name[:-len("_ir.png")]
            vis_path = dataset / f"{pair_id}_vis.png"
            if not vis_path.is_file():
                raise FusezcaError(f"no visible image for pair '{pair_id}' "
                                   f"(expected {vis_path})")
            pairs.append((pair_id, ir_path, vis_path))
    return sorted(pairs, key=lambda p: p[0])


def _grid(args) -> list[FusionConfig]:
    backbones = _split(args.backbones)
    norms = _split(args.norms)
    zca_values = {"on": (True,), "off": (False,),
                  "both": (True, False)}[args.zca]
    configs = []
    for backbone in backbones:
        if backbone not in VALID_BLOCKS:
            args.parser.error(f"unknown backbone '{backbone}'")
        blocks = _split(args.blocks) if args.blocks \
            else _TABLE_BLOCKS[backbone]
        for block in blocks:
            for norm in norms:
                for zca in zca_values:
                    configs.append(_make_config(
                        args.parser, backbone, block, norm, zca,
                        args.t, args.epsilon))
    return configs


def run_batch(args) -> int:
    pairs = _discover_pairs(args)
    if not pairs:
        raise FusezcaError(f"no pairs found in '{args.dataset}'")
    configs = _grid(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for cfg in configs:
        (out_dir / cfg.slug).mkdir(parents=True, exist_ok=True)

    backbones = sorted({cfg.backbone_id for cfg in configs})
    blocks_by_backbone = {
        bb: sorted({cfg.block_id for cfg in configs
                    if cfg.backbone_id == bb})
        for bb in backbones}
    local = threading.local()

    def sessions():
        if not hasattr(local, "sessions"):
            local.sessions = {bb: _open_session(args, bb)
                              for bb in backbones}
        return local.sessions

    rows = []
    timing_rows = []
    failures = []
    lock = threading.Lock()

    def process(pair_entry):
        pair_id, ir_path, vis_path = pair_entry
        try:
            pair = ImagePair(load_image(ir_path), load_image(vis_path))
            for backbone in backbones:
                session = sessions()[backbone]
                feats_ir = session.extract_many(
                    pair.infrared, blocks_by_backbone[backbone])
                feats_vis = session.extract_many(
                    pair.visible, blocks_by_backbone[backbone])
                for cfg in configs:
                    if cfg.backbone_id != backbone:
                        continue
                    result = fuse_pair(
                        pair, cfg, session,
                        features=(feats_ir[cfg.block_id],
                                  feats_vis[cfg.block_id]))
                    save_image(result.fused,
                               out_dir / cfg.slug / f"{pair_id}.png")
                    report = None
                    if not args.no_metrics:
                        report = compute_report(result.fused, pair)
                    with lock:
                        if report is not None:
                            rows.append((pair_id, cfg.slug, report))
                        for stage, seconds in result.timings.items():
                            timing_rows.append(
                                (pair_id, cfg.slug, stage, seconds))
        except Exception as e:  # keep going; report at the end
            with lock:
                failures.append((pair_id, e))
            print(f"pair '{pair_id}' failed: {e}", file=sys.stderr)

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            list(pool.map(process, pairs))
    else:
        for entry in pairs:
            process(entry)

    if not args.no_metrics:
        _write_results_csv(out_dir / "results.csv", rows)
    _write_timings_csv(out_dir / "timings.csv", timing_rows)

    done = len(pairs) - len(failures)
    print(f"fused {done}/{len(pairs)} pairs x {len(configs)} configs "
          f"-> {out_dir}")
    return 1 if failures else 0


def _write_results_csv(path: Path, rows) -> None:
    rows = sorted(rows, key=lambda r: (r[0], r[1]))
    slugs = sorted({slug for _, slug, _ in rows})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("pair_id", "config_slug") + METRIC_COLUMNS)
        for pair_id, slug, report in rows:
            writer.writerow([pair_id, slug] + report.csv_row())
        for slug in slugs:
            reports = [r for _, s, r in rows if s == slug]
            writer.writerow(["average", slug] + _average_row(reports))


def _average_row(reports) -> list[str]:
    out = []
    for column in METRIC_COLUMNS:
        vals = [getattr(r, column) for r in reports
                if getattr(r, column) is not None]
        out.append(repr(float(np.mean(vals))) if vals else "")
    return out


def _write_timings_csv(path: Path, timing_rows) -> None:
    timing_rows = sorted(timing_rows, key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("pair_id", "config_slug", "stage", "seconds"))
        writer.writerows(timing_rows)
