"""Command line entry point: ``depthfuse {run,eval,synth,bench,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .bench import bench_modes, fusion_scaling
from .pipeline import (DEPTH_SOURCES, ConfigError, Pipeline, PipelineConfig, dataset_frames, evaluate_dir,
                       load_bundle, load_config, run, save_config, write_synthetic_dataset)
from .skeleton import builtin_coco13
from .synth import NoiseConfig, SceneConfig, matched_offsets, synthesize_frame

log = logging.getLogger("depthfuse")


def _csv(text):
    return [s for s in text.split(",") if s]


def add_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline config (override the config file)")
    g.add_argument("--config", help="JSON config file mirroring PipelineConfig")
    g.add_argument("--skeleton", help="skeleton JSON file (default: built-in coco13)")
    g.add_argument("--mode", dest="depth_source", choices=DEPTH_SOURCES)
    g.add_argument("--cameras", type=_csv, help="comma separated camera subset")
    g.add_argument("--no-offsets", dest="apply_offsets", action="store_false", default=None,
                   help="do not add per-joint depth offsets")
    g.add_argument("--voxel-resolution", type=float)
    g.add_argument("--cloud-stride", type=int)
    g.add_argument("--splat-radius", type=int)
    g.add_argument("--min-confidence", type=float)
    g.add_argument("--pairing-window", type=float)
    g.add_argument("--workers", type=int)
    g.add_argument("--arm-length", type=int)
    g.add_argument("--thickness", type=int)
    g.add_argument("--min-valid", type=int)
    g.add_argument("--match-threshold", type=float)
    g.add_argument("--cluster-threshold", dest="new_person_cluster_threshold", type=float)
    g.add_argument("--drop-after", type=int)
    g.add_argument("--limb-threshold", type=float)
    g.add_argument("--topk", type=int)
    g.add_argument("--min-shared-joints", type=int)
    g.add_argument("--min-support", type=int)


_TOP = ("skeleton", "depth_source", "cameras", "apply_offsets", "voxel_resolution", "cloud_stride",
        "splat_radius", "min_confidence", "pairing_window", "workers")
_CROSS = {"arm_length": "arm_length", "thickness": "thickness", "min_valid": "min_valid"}
_FUSION = ("match_threshold", "new_person_cluster_threshold", "drop_after", "limb_threshold", "topk",
           "min_shared_joints", "min_support")


def config_from_args(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    top = {k: getattr(args, k) for k in _TOP if getattr(args, k, None) is not None}
    cross = {v: getattr(args, k) for k, v in _CROSS.items() if getattr(args, k, None) is not None}
    fusion = {k: getattr(args, k) for k in _FUSION if getattr(args, k, None) is not None}
    if cross:
        top["cross"] = replace(cfg.cross, **cross)
    if fusion:
        top["fusion"] = replace(cfg.fusion, **fusion)
    for k in ("input_dir", "output_dir"):
        if getattr(args, k, None) is not None:
            top[k] = str(getattr(args, k))
    return replace(cfg, **top)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    if args.save_config:
        save_config(args.save_config, cfg)
    results, timings, report = run(cfg, args.calibration, evaluate=args.eval)
    n = len(timings)
    print(f"processed {n} frames, {sum(len(v) for v in results.values())} fused poses")
    if n:
        for stage in ("depth_source", "depth_extraction", "fusion", "total"):
            print(f"  {stage:<17} {1e3 * np.mean([t[stage] for t in timings]):8.3f} ms/frame")
    if report is not None:
        print(json.dumps(report.as_dict(), indent=1))
    return 0


def cmd_eval(args) -> int:
    skel = io.load_skeleton_file(args.skeleton) if args.skeleton else builtin_coco13()
    report = evaluate_dir(args.pred, args.gt, skel, args.out)
    print(json.dumps(report.as_dict(), indent=1))
    return 0


def cmd_synth(args) -> int:
    noise = NoiseConfig(args.depth_sigma, args.pixel_sigma, args.dropout, args.holes)
    scene = SceneConfig(person_count=args.persons, camera_count=args.cameras, camera_ring_radius=args.radius,
                        image_width=args.width, image_height=args.height, focal=args.focal, noise=noise,
                        seed=args.seed, include_occluded=args.include_occluded)
    base = io.load_skeleton_file(args.skeleton) if args.skeleton else builtin_coco13()
    skel = matched_offsets(base, scene.limb_radius, scene.torso_radius)
    frames = (synthesize_frame(scene, i, skel) for i in range(args.frames))
    write_synthetic_dataset(args.out, frames, skel, args.depth_format)
    print(f"wrote {args.frames} frames x {args.cameras} views to {args.out}")
    return 0


def cmd_bench(args) -> int:
    cfg = config_from_args(args)
    scene = SceneConfig(camera_count=args.views, person_count=args.persons, seed=args.seed)
    rows = bench_modes(args.modes, args.repetitions, args.frames, scene, cfg)
    doc = {"modes": rows}
    for r in rows:
        print(f"[{r['mode']}] {r['views']} views x {r['persons']} persons, {r['frames']} frames"
              f" x {r['repetitions']} reps, deterministic={r['deterministic']}")
        for stage, s in r["stages"].items():
            print(f"  {stage:<17} mean {s['mean_ms']:8.3f}  median {s['median_ms']:8.3f}  p95 {s['p95_ms']:8.3f} ms")
    if args.scaling:
        doc["scaling"] = fusion_scaling()
        print("fusion scaling (best of 20):")
        for r in doc["scaling"]:
            print(f"  views {r['views']:2d} persons {r['persons']:2d}  {r['fusion_ms']:.3f} ms")
    if args.json:
        io.write_json(args.json, doc)
    return 0


def _arr(a):
    return [[None if np.isnan(x) else float(x) for x in row] for row in np.asarray(a)]


def cmd_inspect(args) -> int:
    cfg = config_from_args(args)
    root = Path(cfg.input_dir)
    skel = cfg.skeleton_definition()
    calibs = io.load_calibrations(args.calibration or root / "calibration.json")
    frames = [f for f in dataset_frames(root) if f <= args.frame]
    if args.frame not in frames:
        raise SystemExit(f"frame {args.frame} not found in {root}")
    pipe = Pipeline(cfg, calibs, skel)
    views = pipe.views if cfg.cameras is not None else None
    debug: list = []
    try:
        for f in frames:
            debug.clear()
            pipe.process(load_bundle(root, f, skel, calibs, views, cfg.min_confidence), debug)
    finally:
        pipe.close()
    doc = {"frame": args.frame, "joints": list(skel.joints), "persons": [
        {"person_id": d.person_id,
         "proposals": [{"view": p.source_view, "person_index": p.person_index} for p in d.proposals],
         "raw": [_arr(r) for r in d.raw],
         "filtered": [_arr(r) for r in d.filtered]}
        for d in debug]}
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthfuse", description="Multi-view RGBD pose fusion")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="process a dataset directory")
    p.add_argument("--input", dest="input_dir")
    p.add_argument("--output", dest="output_dir")
    p.add_argument("--calibration", help="calibration file (default: <input>/calibration.json)")
    p.add_argument("--eval", action="store_true", help="evaluate against <input>/ground_truth.json")
    p.add_argument("--save-config", help="write the effective config here")
    add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a prediction directory against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--skeleton")
    p.add_argument("--out", help="write report.json and report.csv here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--cameras", type=int, default=5)
    p.add_argument("--persons", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float, default=3.5, help="camera ring radius (m)")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--focal", type=float, default=525.0)
    p.add_argument("--depth-sigma", type=float, default=0.0, help="meters")
    p.add_argument("--pixel-sigma", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--holes", type=float, default=0.0)
    p.add_argument("--include-occluded", action="store_true", help="also emit occluded keypoints")
    p.add_argument("--skeleton", help="skeleton JSON; offsets are replaced by capsule radii")
    p.add_argument("--depth-format", choices=("png", "depth"), default="png")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="per-stage latency on a synthetic workload")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--views", type=int, default=5, help="number of synthetic cameras")
    p.add_argument("--persons", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modes", type=_csv, default=list(DEPTH_SOURCES))
    p.add_argument("--scaling", action="store_true", help="also time fusion over a views x persons grid")
    p.add_argument("--json", help="write the summary here")
    add_config_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="dump a frame's proposals before and after outlier filtering")
    p.add_argument("--input", dest="input_dir", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--calibration")
    p.add_argument("--out")
    add_config_args(p)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
